"""The two-phase training loop: schedule, freezing, metrics, artifacts."""

import dataclasses

import numpy as np
import pytest

from pairsieve.config import TrainConfig
from pairsieve.corpus import CorpusError
from pairsieve.gradients import NumericError
from pairsieve.model import init_bvf, init_model, load_checkpoint, param_tensors
from pairsieve.training import metrics_csv_header, parse_metrics_csv, train

SMALL = TrainConfig(d_emb=8, batch_size=8, n_f=3, freeze_epochs=2,
                    joint_epochs=3, bvf_count=2, seed=0)


def _cfg(**kw):
    return dataclasses.replace(SMALL, **kw)


def test_schedule_phases_and_lr(tiny_corpus):
    corpus, _ = tiny_corpus
    _, metrics = train(SMALL, corpus)
    assert [m.epoch for m in metrics] == [0, 1, 2, 3, 4]
    assert [m.phase for m in metrics] == ["freeze"] * 2 + ["joint"] * 3
    assert [m.lr for m in metrics] == [0.1, 0.1, 0.01, 0.01, 0.01]
    for m in metrics:
        assert 0.0 <= m.z0_fraction <= 1.0
        for rate in (m.z1_rate_clean, m.z1_rate_loose, m.z1_rate_noise):
            assert 0.0 <= rate <= 1.0
        assert np.isfinite(m.loss_lvc) and np.isfinite(m.loss_adv)


def test_freeze_epochs_zero_is_all_joint(tiny_corpus):
    corpus, _ = tiny_corpus
    _, metrics = train(_cfg(freeze_epochs=0, joint_epochs=2), corpus)
    assert [m.phase for m in metrics] == ["joint", "joint"]
    assert [m.lr for m in metrics] == [0.01, 0.01]


def test_training_is_deterministic(tiny_corpus):
    corpus, _ = tiny_corpus
    params_a, metrics_a = train(SMALL, corpus)
    params_b, metrics_b = train(SMALL, corpus)
    assert [m.csv_row() for m in metrics_a] == [m.csv_row() for m in metrics_b]
    for name, arr in param_tensors(params_a).items():
        assert np.array_equal(arr, param_tensors(params_b)[name]), name

    params_c, metrics_c = train(_cfg(seed=1), corpus)
    assert [m.csv_row() for m in metrics_a] != [m.csv_row() for m in metrics_c]


def _replay_init(cfg, corpus, with_bvf):
    """Rebuild the params train() starts from, using its seeding scheme."""
    root = np.random.SeedSequence(cfg.seed)
    ss_init, ss_bvf = root.spawn(5)[:2]
    d_in = corpus[0].sentence_raw.shape[0]
    params = init_model(d_in, cfg.d_emb, cfg.attention_kind, cfg.input_mode,
                        cfg.bvf_count, np.random.default_rng(ss_init), d_att=cfg.d_att)
    if with_bvf:
        init_bvf(params, corpus, np.random.default_rng(ss_bvf))
    return params


def test_freeze_phase_leaves_discriminator_untouched(tiny_corpus):
    corpus, _ = tiny_corpus
    cfg = _cfg(freeze_epochs=2, joint_epochs=0)
    params, _ = train(cfg, corpus)
    start = _replay_init(cfg, corpus, with_bvf=True)
    assert np.array_equal(params.disc.bvf, start.disc.bvf)
    assert np.array_equal(params.disc.a_adv, start.disc.a_adv)
    assert np.array_equal(params.disc.b_adv, start.disc.b_adv)
    # while the embedding channels did move
    assert not np.array_equal(params.language.weight, start.language.weight)


def test_disabled_discriminator_never_updates(tiny_corpus):
    corpus, _ = tiny_corpus
    cfg = _cfg(discriminator_enabled=False, freeze_epochs=0, joint_epochs=3)
    params, metrics = train(cfg, corpus)
    start = _replay_init(cfg, corpus, with_bvf=False)
    assert np.array_equal(params.disc.bvf, start.disc.bvf)
    assert all(m.z0_fraction == 1.0 for m in metrics)
    assert all(m.loss_adv == 0.0 for m in metrics)


def test_soft_sampler_and_triplet_loss_run(tiny_corpus):
    corpus, _ = tiny_corpus
    _, metrics = train(_cfg(sampler_kind="softmax_soft"), corpus)
    assert all(0.0 <= m.z0_fraction <= 1.0 for m in metrics)
    _, metrics = train(_cfg(loss_kind="triplet"), corpus)
    assert all(np.isfinite(m.loss_lvc) for m in metrics)


def test_run_dir_artifacts(tmp_path, tiny_corpus):
    corpus, _ = tiny_corpus
    run_dir = tmp_path / "run"
    params, metrics = train(SMALL, corpus, run_dir=run_dir)

    text = (run_dir / "metrics.csv").read_text()
    parsed = parse_metrics_csv(text)
    assert [m.csv_row() for m in parsed] == [m.csv_row() for m in metrics]

    final = load_checkpoint(run_dir / "checkpoint_final.json")
    for name, arr in param_tensors(params).items():
        assert np.array_equal(arr, param_tensors(final)[name]), name

    frozen = load_checkpoint(run_dir / "checkpoint_freeze.json")
    start = _replay_init(SMALL, corpus, with_bvf=True)
    assert np.array_equal(frozen.disc.bvf, start.disc.bvf)
    assert not np.array_equal(frozen.language.weight, final.language.weight)


def test_metrics_survive_numeric_failure(tmp_path, tiny_corpus):
    corpus, _ = tiny_corpus
    run_dir = tmp_path / "run"
    # a learning rate this absurd overflows the weights within an epoch
    with np.errstate(all="ignore"), pytest.raises(NumericError):
        train(_cfg(lr=1e200, freeze_epochs=0, joint_epochs=2), corpus, run_dir=run_dir)
    text = (run_dir / "metrics.csv").read_text()
    assert text.splitlines()[0] == metrics_csv_header()


def test_parse_metrics_csv_rejects_garbage():
    with pytest.raises(ValueError):
        parse_metrics_csv("nope\n1,2,3\n")
    with pytest.raises(ValueError):
        parse_metrics_csv(metrics_csv_header() + "\n1,joint,0.1\n")


def test_corpus_validation(tiny_corpus):
    corpus, _ = tiny_corpus
    with pytest.raises(CorpusError):
        train(SMALL, corpus[:1])
    mixed = corpus[:4] + [dataclasses.replace(
        corpus[4],
        sentence_raw=np.zeros(5),
        frames_raw=np.zeros((3, 5)),
        grounded=np.zeros(3, dtype=bool),
    )]
    with pytest.raises(CorpusError):
        train(SMALL, mixed)

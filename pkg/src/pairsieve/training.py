"""Two-phase training loop.

Phase one (freeze) trains the embedding channels while the discriminator
stays fixed: the gate already filters pairs but receives no updates.
Phase two (joint) unfreezes the discriminator, adds the adversarial term
to the objective, and drops the learning rate once. Per-epoch metrics
stream to CSV as they are produced, so a crashed run keeps its history.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .corpus import TAGS, CorpusError, epoch_batches, sample_frames
from .gradients import PairBatchArrays, compute_gradients
from .model import init_bvf, init_model, param_tensors, save_checkpoint
from .optim import init_optimizer_state, sgd_step

METRICS_COLUMNS = (
    "epoch", "phase", "lr", "loss_lvc", "loss_adv",
    "z0_fraction", "z1_rate_clean", "z1_rate_loose", "z1_rate_noise",
)

DISC_TENSORS = frozenset({"disc.bvf", "disc.a_adv", "disc.b_adv"})


@dataclass
class EpochMetrics:
    """One metrics row: losses and gate behaviour for one epoch."""

    epoch: int
    phase: str
    lr: float
    loss_lvc: float
    loss_adv: float
    z0_fraction: float
    z1_rate_clean: float
    z1_rate_loose: float
    z1_rate_noise: float

    def csv_row(self):
        vals = [str(self.epoch), self.phase] + [
            repr(float(v)) for v in (
                self.lr, self.loss_lvc, self.loss_adv, self.z0_fraction,
                self.z1_rate_clean, self.z1_rate_loose, self.z1_rate_noise,
            )
        ]
        return ",".join(vals)


def metrics_csv_header():
    return ",".join(METRICS_COLUMNS)


def parse_metrics_csv(text):
    """Inverse of the CSV writer; floats round-trip exactly."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != metrics_csv_header():
        raise ValueError("not a metrics CSV (bad or missing header)")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(METRICS_COLUMNS):
            raise ValueError(f"bad metrics row: {ln!r}")
        out.append(EpochMetrics(
            epoch=int(parts[0]), phase=parts[1], lr=float(parts[2]),
            loss_lvc=float(parts[3]), loss_adv=float(parts[4]),
            z0_fraction=float(parts[5]), z1_rate_clean=float(parts[6]),
            z1_rate_loose=float(parts[7]), z1_rate_noise=float(parts[8]),
        ))
    return out


class _EpochStats:
    """Running sums for one epoch's metrics row."""

    def __init__(self):
        self.keep_sum = 0.0
        self.pair_count = 0
        self.lvc_num = 0.0
        self.lvc_den = 0.0
        self.adv_num = 0.0
        self.adv_den = 0.0
        self.tag_gate = np.zeros(len(TAGS))
        self.tag_count = np.zeros(len(TAGS))

    def add(self, fwd, labels, tag_idx):
        gate = 1.0 - fwd.keep
        self.keep_sum += float(fwd.keep.sum())
        self.pair_count += labels.shape[0]
        if fwd.pair_lvc_loss is not None:
            self.lvc_num += float((fwd.keep * fwd.pair_lvc_loss).sum())
            self.lvc_den += float(fwd.keep.sum())
        elif fwd.member_idx.shape[0] >= 2:
            self.lvc_num += float((fwd.member_keep * fwd.member_hinges).sum())
            self.lvc_den += fwd.member_idx.shape[0]
        self.adv_num += float((gate * fwd.pair_adv_loss).sum())
        self.adv_den += float(gate.sum())
        pos = labels == 1
        t = tag_idx[pos]
        g = gate[pos]
        for k in range(len(TAGS)):
            sel = t == k
            self.tag_gate[k] += float(g[sel].sum())
            self.tag_count[k] += int(sel.sum())

    def row(self, epoch, phase, lr):
        def ratio(num, den):
            return num / den if den > 0 else 0.0
        rates = [ratio(self.tag_gate[k], self.tag_count[k]) for k in range(len(TAGS))]
        return EpochMetrics(
            epoch=epoch, phase=phase, lr=lr,
            loss_lvc=ratio(self.lvc_num, self.lvc_den),
            loss_adv=ratio(self.adv_num, self.adv_den),
            z0_fraction=ratio(self.keep_sum, self.pair_count),
            z1_rate_clean=rates[TAGS.index("clean")],
            z1_rate_loose=rates[TAGS.index("loose")],
            z1_rate_noise=rates[TAGS.index("noise")],
        )


def _corpus_dim(corpus):
    if len(corpus) < 2:
        raise CorpusError("training needs at least 2 clips")
    d = corpus[0].sentence_raw.shape[0]
    for c in corpus:
        if c.sentence_raw.shape[0] != d or c.frames_raw.shape[1] != d:
            raise CorpusError(f"clip {c.id} has feature dimension != {d}")
    return d


def _batch_arrays(corpus, batch, n_f, rng):
    xs = np.stack([corpus[i].sentence_raw for i in batch.sentence_idx])
    xf = np.stack([sample_frames(corpus[i], n_f, rng) for i in batch.clip_idx])
    return PairBatchArrays(xs=xs, xf=xf, labels=batch.labels)


def train(cfg, corpus, run_dir=None, log=None):
    """Train on a tagged corpus; returns (params, per-epoch metrics).

    With run_dir set, metrics.csv is streamed row by row and checkpoints
    are written at the freeze/joint boundary and at the end.
    """
    cfg.validate()
    d_in = _corpus_dim(corpus)
    root = np.random.SeedSequence(cfg.seed)
    ss_init, ss_bvf, ss_batch, ss_frame, ss_gate = root.spawn(5)
    rng_init = np.random.default_rng(ss_init)
    rng_batch = np.random.default_rng(ss_batch)
    rng_frame = np.random.default_rng(ss_frame)
    rng_gate = np.random.default_rng(ss_gate)

    params = init_model(
        d_in, cfg.d_emb, cfg.attention_kind, cfg.input_mode,
        cfg.bvf_count, rng_init, d_att=cfg.d_att,
    )
    if cfg.discriminator_enabled:
        init_bvf(params, corpus, np.random.default_rng(ss_bvf))

    tensors = param_tensors(params)
    state = init_optimizer_state(tensors)
    tag_idx = np.array([TAGS.index(c.tag) for c in corpus])

    total_epochs = cfg.freeze_epochs + cfg.joint_epochs
    metrics = []
    csv_fh = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        csv_fh = open(os.path.join(run_dir, "metrics.csv"), "w")
        csv_fh.write(metrics_csv_header() + "\n")
        csv_fh.flush()
    try:
        for epoch in range(total_epochs):
            phase = "freeze" if epoch < cfg.freeze_epochs else "joint"
            lr = cfg.lr if phase == "freeze" else cfg.lr / cfg.lr_drop_factor
            frozen = DISC_TENSORS if (phase == "freeze" or not cfg.discriminator_enabled) else ()
            stats = _EpochStats()
            for batch in epoch_batches(corpus, cfg.batch_size, rng_batch):
                arrays = _batch_arrays(corpus, batch, cfg.n_f, rng_frame)
                fwd, grads = compute_gradients(
                    params, arrays, cfg, phase, rng=rng_gate
                )
                sgd_step(tensors, grads, state, lr, cfg.momentum,
                         cfg.weight_decay, frozen=frozen)
                stats.add(fwd, batch.labels, tag_idx[batch.clip_idx])
            row = stats.row(epoch, phase, lr)
            metrics.append(row)
            if csv_fh is not None:
                csv_fh.write(row.csv_row() + "\n")
                csv_fh.flush()
            if log is not None:
                log(f"epoch {epoch:3d} [{phase}] lr={lr:g} "
                    f"loss_lvc={row.loss_lvc:.4f} loss_adv={row.loss_adv:.4f} "
                    f"z0={row.z0_fraction:.3f}")
            if run_dir is not None and cfg.freeze_epochs > 0 and epoch == cfg.freeze_epochs - 1:
                save_checkpoint(params, os.path.join(run_dir, "checkpoint_freeze.json"))
        if run_dir is not None:
            save_checkpoint(params, os.path.join(run_dir, "checkpoint_final.json"))
    finally:
        if csv_fh is not None:
            csv_fh.close()
    return params, metrics

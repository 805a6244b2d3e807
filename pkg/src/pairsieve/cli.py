"""Command line interface.

Commands cover the whole experiment cycle: generate a tagged corpus,
train, evaluate retrieval, sweep one ablation axis, and dump attention
weights. Exit codes: 0 success, 1 bad usage or bad data, 2 numeric
failure during training.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .config import (
    CONFIG_SCHEMA,
    LOSS_KINDS,
    ConfigError,
    apply_overrides,
    corpus_spec_from,
    load_config,
    train_config_from,
    write_manifest,
)
from .corpus import CorpusError, generate_corpus, load_corpus, save_corpus
from .evaluation import (
    EvalError,
    bidirectional_retrieval,
    export_attention,
    report_csv,
    report_summary,
)
from .gradients import NumericError
from .losses import LossError
from .model import (
    ATTENTION_KINDS,
    INPUT_MODES,
    SAMPLER_KINDS,
    ModelError,
    load_checkpoint,
)
from .training import train

ABLATION_AXES = {
    "bvf_count": [4, 16, 64],
    "sampler_kind": list(SAMPLER_KINDS),
    "input_mode": list(INPUT_MODES),
    "loss_kind": list(LOSS_KINDS),
    "attention_kind": list(ATTENTION_KINDS),
    "discriminator_enabled": [True, False],
}


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_values(args):
    values = load_config(args.config) if args.config else {}
    return apply_overrides(values, args.set or [])


def _resolved_dict(obj, owner):
    """Flatten a CorpusSpec or TrainConfig back into config-file keys."""
    out = {}
    for key, (_, (own, field_name)) in CONFIG_SCHEMA.items():
        if own == owner:
            out[key] = getattr(obj, field_name)
    return out


def cmd_gen_corpus(args):
    spec = corpus_spec_from(_load_values(args), seed_override=args.seed)
    train_recs, test_recs = generate_corpus(spec)
    os.makedirs(args.out, exist_ok=True)
    train_path = os.path.join(args.out, "train.corpus")
    test_path = os.path.join(args.out, "test.corpus")
    save_corpus(train_recs, train_path)
    save_corpus(test_recs, test_path)
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        "gen-corpus",
        _resolved_dict(spec, "corpus"),
        {"train_corpus": "train.corpus", "test_corpus": "test.corpus"},
        __version__,
    )
    tags = [r.tag for r in train_recs]
    counts = {t: tags.count(t) for t in ("clean", "loose", "noise")}
    print(f"wrote {len(train_recs)} train / {len(test_recs)} test records to {args.out} "
          f"(train tags: {counts})")
    return 0


def cmd_train(args):
    cfg = train_config_from(_load_values(args), seed_override=args.seed)
    corpus = load_corpus(args.corpus)
    log = None if args.quiet else print
    params, metrics = train(cfg, corpus, run_dir=args.out, log=log)
    if args.out is not None:
        write_manifest(
            os.path.join(args.out, "manifest.json"),
            "train",
            _resolved_dict(cfg, "train"),
            {
                "corpus": os.path.abspath(args.corpus),
                "metrics": "metrics.csv",
                "checkpoint": "checkpoint_final.json",
            },
            __version__,
        )
    last = metrics[-1]
    print(f"done: {len(metrics)} epochs, final z0_fraction={last.z0_fraction:.3f}, "
          f"loss_lvc={last.loss_lvc:.4f}")
    return 0


def cmd_eval(args):
    params = load_checkpoint(args.checkpoint)
    records = load_corpus(args.corpus)
    report = bidirectional_retrieval(params, records)
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.csv"), "w") as fh:
            fh.write(report_csv(report))
    print(json.dumps(report_summary(report)))
    return 0


def _parse_axis_values(axis, text):
    typ = CONFIG_SCHEMA[axis][0]
    vals = []
    for item in text.split(","):
        item = item.strip()
        if typ is bool:
            vals.append(item.lower() in ("true", "1", "yes"))
        elif typ is int:
            vals.append(int(item))
        else:
            vals.append(item)
    return vals


def cmd_ablate(args):
    values = _load_values(args)
    corpus = load_corpus(args.corpus)
    test_records = load_corpus(args.test_corpus)
    axis_values = ABLATION_AXES[args.axis]
    if args.values:
        axis_values = _parse_axis_values(args.axis, args.values)
    os.makedirs(args.out, exist_ok=True)
    header = ("axis,value,map_video_search,map_sentence_search,"
              "rec_at_5_video_search,rec_at_5_sentence_search,final_z0_fraction")
    rows = [header]
    for val in axis_values:
        cfg = train_config_from({**values, args.axis: val}, seed_override=args.seed)
        run_dir = os.path.join(args.out, f"{args.axis}={val}")
        params, metrics = train(cfg, corpus, run_dir=run_dir)
        report = bidirectional_retrieval(params, test_records)
        row = ",".join([
            args.axis, str(val),
            repr(report.video_search.mean_ap),
            repr(report.sentence_search.mean_ap),
            repr(report.video_search.recall[5]),
            repr(report.sentence_search.recall[5]),
            repr(metrics[-1].z0_fraction),
        ])
        rows.append(row)
        print(row)
    with open(os.path.join(args.out, "ablation.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        "ablate",
        dict(sorted(values.items())),
        {"axis": args.axis, "values": [str(v) for v in axis_values],
         "table": "ablation.csv"},
        __version__,
    )
    return 0


def cmd_attention_dump(args):
    params = load_checkpoint(args.checkpoint)
    records = load_corpus(args.corpus)
    rows = export_attention(params, records)
    lines = ["clip_id,frame,grounded,alpha,alpha_rel"]
    for r in rows:
        lines.append(f"{r['clip_id']},{r['frame']},{r['grounded']},"
                     f"{repr(r['alpha'])},{repr(r['alpha_rel'])}")
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote attention weights for {len(records)} clips to {args.out}")
    return 0


def _add_common(p, seed_help):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, default=None, help=seed_help)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser():
    parser = _Parser(prog="pairsieve", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pairsieve {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="generate a tagged synthetic corpus")
    _add_common(p, "override corpus_seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train on a tagged corpus")
    _add_common(p, "override the training seed")
    p.add_argument("--corpus", required=True, help="training corpus file")
    p.add_argument("--out", default=None, help="run directory for metrics and checkpoints")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch logging")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="bidirectional retrieval metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--corpus", required=True, help="test corpus file")
    p.add_argument("--out", default=None, help="directory for report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one config axis and tabulate retrieval")
    _add_common(p, "training seed shared by every run in the sweep")
    p.add_argument("--corpus", required=True, help="training corpus file")
    p.add_argument("--test-corpus", required=True, help="test corpus file")
    p.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES),
                   help="config key to sweep")
    p.add_argument("--values", default=None,
                   help="comma-separated axis values (default: a built-in list)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("attention-dump", help="per-frame attention weights as CSV")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--corpus", required=True, help="corpus file to attend over")
    p.add_argument("--out", default=None, help="output CSV file (default: stdout)")
    p.set_defaults(func=cmd_attention_dump)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NumericError as exc:
        print(f"pairsieve: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CorpusError, ModelError, EvalError, LossError) as exc:
        print(f"pairsieve: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"pairsieve: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

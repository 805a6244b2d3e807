"""Bidirectional retrieval evaluation.

Every test sentence is scored against every test clip with the same
attention pooling used in training, so a clip's pooled vector depends on
which sentence is querying it. Video search ranks clips for each
sentence (rows of the score matrix); sentence search ranks sentences for
each clip (columns). Each query has exactly one relevant item, so
average precision reduces to 1/rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelError, embed, softmax

DEFAULT_RECALL_KS = (1, 5, 10)


class EvalError(ValueError):
    """Bad inputs to a metric or an empty evaluation set."""


def rank_of(scores, rel_idx):
    """1-based rank of the relevant item; ties break by candidate index."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise EvalError("scores must be a non-empty vector")
    if not 0 <= rel_idx < scores.shape[0]:
        raise EvalError(f"relevant index {rel_idx} out of range")
    if not np.all(np.isfinite(scores)):
        raise EvalError("scores must be finite")
    s = scores[rel_idx]
    greater = int((scores > s).sum())
    ties_before = int((scores[:rel_idx] == s).sum())
    return 1 + greater + ties_before


def average_precision(scores, rel_idx):
    """AP with a single relevant item: 1 / rank."""
    return 1.0 / rank_of(scores, rel_idx)


def recall_at_k(scores, rel_idx, k):
    """1.0 if the relevant item ranks in the top k, else 0.0."""
    if k < 1:
        raise EvalError("k must be >= 1")
    return 1.0 if rank_of(scores, rel_idx) <= k else 0.0


def score_matrix(params, records):
    """Score every sentence against every clip: out[i, j] = s_i . v_ij.

    v_ij pools clip j's frames (all of them) under sentence i's
    attention, so each clip is re-pooled per query.
    """
    if not records:
        raise EvalError("no records to evaluate")
    att = params.attention
    s = embed(params.language, np.stack([r.sentence_raw for r in records]))
    n = len(records)
    out = np.empty((n, n))
    for j, rec in enumerate(records):
        h = embed(params.vision, rec.frames_raw)  # (F, E)
        if att.kind == "uniform":
            e = np.zeros((n, h.shape[0]))
        elif att.kind == "dot":
            e = s @ h.T
        elif att.kind == "multiplicative":
            e = (s @ att.w_mult) @ h.T
        elif att.kind == "additive":
            t = np.tanh((s @ att.w1)[:, None, :] + (h @ att.w2)[None, :, :])
            e = t @ att.w_score
        else:
            raise ModelError(f"unknown attention kind {att.kind!r}")
        alpha = softmax(e)          # (n, F)
        v = alpha @ h               # (n, E)
        out[:, j] = (s * v).sum(axis=1)
    return out


@dataclass
class DirectionReport:
    """Metrics for one search direction, in percent."""

    mean_ap: float
    recall: dict
    ranks: np.ndarray


@dataclass
class RetrievalReport:
    n_queries: int
    video_search: DirectionReport
    sentence_search: DirectionReport


def _direction_report(ranks, n_candidates, ks):
    ranks = np.asarray(ranks)
    mean_ap = float((1.0 / ranks).mean() * 100.0)
    recall = {
        int(k): float((ranks <= min(k, n_candidates)).mean() * 100.0) for k in ks
    }
    return DirectionReport(mean_ap=mean_ap, recall=recall, ranks=ranks)


def bidirectional_retrieval(params, records, ks=DEFAULT_RECALL_KS):
    """Evaluate both directions over a test set of matched pairs."""
    scores = score_matrix(params, records)
    n = scores.shape[0]
    video_ranks = [rank_of(scores[i, :], i) for i in range(n)]
    sentence_ranks = [rank_of(scores[:, j], j) for j in range(n)]
    return RetrievalReport(
        n_queries=n,
        video_search=_direction_report(video_ranks, n, ks),
        sentence_search=_direction_report(sentence_ranks, n, ks),
    )


def random_baseline_map(n):
    """Expected mAP (percent) of uniform random ranking over n items."""
    if n < 1:
        raise EvalError("n must be >= 1")
    return float(np.mean(1.0 / np.arange(1, n + 1)) * 100.0)


def random_baseline_recall(n, k):
    """Expected Rec@k (percent) of uniform random ranking over n items."""
    if n < 1 or k < 1:
        raise EvalError("n and k must be >= 1")
    return 100.0 * min(k, n) / n


def report_csv(report):
    """metric,direction,value rows; values in percent, repr floats."""
    lines = ["metric,direction,value"]
    for name, direction in (
        ("video_search", report.video_search),
        ("sentence_search", report.sentence_search),
    ):
        lines.append(f"map,{name},{repr(direction.mean_ap)}")
        for k in sorted(direction.recall):
            lines.append(f"rec_at_{k},{name},{repr(direction.recall[k])}")
    return "\n".join(lines) + "\n"


def report_summary(report):
    """One-line dict of headline numbers, for JSON output and logs."""
    return {
        "n_queries": report.n_queries,
        "map_video_search": report.video_search.mean_ap,
        "map_sentence_search": report.sentence_search.mean_ap,
        "recall_video_search": {str(k): v for k, v in sorted(report.video_search.recall.items())},
        "recall_sentence_search": {
            str(k): v for k, v in sorted(report.sentence_search.recall.items())
        },
    }


def export_attention(params, records):
    """Per-frame attention of each record under its own sentence.

    Yields dict rows: clip id, frame index, grounded flag, weight, and
    weight relative to the clip's strongest frame.
    """
    if not records:
        raise EvalError("no records to dump")
    att = params.attention
    rows = []
    for rec in records:
        s = embed(params.language, rec.sentence_raw)
        h = embed(params.vision, rec.frames_raw)
        if att.kind == "uniform":
            e = np.zeros(h.shape[0])
        elif att.kind == "dot":
            e = h @ s
        elif att.kind == "multiplicative":
            e = h @ (att.w_mult.T @ s)
        elif att.kind == "additive":
            e = np.tanh(s @ att.w1 + h @ att.w2) @ att.w_score
        else:
            raise ModelError(f"unknown attention kind {att.kind!r}")
        alpha = softmax(e)
        top = alpha.max()
        for f in range(alpha.shape[0]):
            rows.append({
                "clip_id": rec.id,
                "frame": f,
                "grounded": int(rec.grounded[f]),
                "alpha": float(alpha[f]),
                "alpha_rel": float(alpha[f] / top) if top > 0 else 0.0,
            })
    return rows

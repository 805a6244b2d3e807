"""Embedding channels, frame attention, and the gating discriminator.

Both modalities map raw features through a single fully-connected layer
with ReLU and L2 normalization. Video-side embeddings pool their frames
through one of several attention scorers conditioned on the sentence.
The discriminator compares the pair score against the best match over a
small bank of background video features and turns that margin into a
keep-or-discard gate via the Gumbel trick.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .losses import sigmoid

ATTENTION_KINDS = ("uniform", "dot", "multiplicative", "additive")
INPUT_MODES = ("residual", "concat", "adv_only")
SAMPLER_KINDS = ("gumbel_hard", "softmax_soft")

PARAMS_FORMAT = "pairsieve-params"
PARAMS_VERSION = 1


class ModelError(ValueError):
    """Bad model configuration, shapes, or checkpoint contents."""


@dataclass
class ChannelParams:
    """One modality's embedding layer: y = l2norm(relu(x @ weight + bias))."""

    weight: np.ndarray  # (d_in, d_emb)
    bias: np.ndarray    # (d_emb,)


@dataclass
class AttentionParams:
    """Frame scorer parameters; only the active kind's tensors are set."""

    kind: str
    w_mult: np.ndarray | None = None   # (d_emb, d_emb), multiplicative
    w1: np.ndarray | None = None       # (d_emb, d_att), additive, sentence side
    w2: np.ndarray | None = None       # (d_emb, d_att), additive, frame side
    w_score: np.ndarray | None = None  # (d_att,), additive


@dataclass
class DiscriminatorParams:
    """Background bank plus the affine map from pair scores to the gate logit."""

    bvf: np.ndarray        # (n_bvf, d_emb), unit rows
    a_adv: np.ndarray      # (1,) residual/adv_only; (2,) concat
    b_adv: np.ndarray      # (1,)
    input_mode: str


@dataclass
class ModelParams:
    """Everything trainable, grouped by role."""

    language: ChannelParams
    vision: ChannelParams
    attention: AttentionParams
    disc: DiscriminatorParams
    a_lvc: np.ndarray  # (1,) scale on the pair score for the match logit
    b_lvc: np.ndarray  # (1,)


@dataclass
class GateDecision:
    """Outcome of gating one pair."""

    p_lvc: float
    p_adv: float
    f_adv: float
    z: int             # 1 = treat the pair as a non-correspondence
    soft_weight: float # sigma of the perturbed logit, used by the soft sampler


def init_model(d_in, d_emb, cfg_attention, cfg_input_mode, n_bvf, rng, d_att=0):
    """Random init; weights ~ N(0, 1/sqrt(fan_in)), biases zero.

    The gate bias starts slightly negative so early training keeps most
    pairs, matching the warm-up behaviour we want before the channels
    have learned anything.
    """
    if cfg_attention not in ATTENTION_KINDS:
        raise ModelError(f"unknown attention kind {cfg_attention!r}")
    if cfg_input_mode not in INPUT_MODES:
        raise ModelError(f"unknown discriminator input mode {cfg_input_mode!r}")
    if d_in < 1 or d_emb < 1 or n_bvf < 1:
        raise ModelError("d_in, d_emb, and n_bvf must all be >= 1")
    if d_att < 1:
        d_att = d_emb

    def lin(shape, fan_in):
        return rng.normal(scale=1.0 / np.sqrt(fan_in), size=shape)

    language = ChannelParams(weight=lin((d_in, d_emb), d_in), bias=np.zeros(d_emb))
    vision = ChannelParams(weight=lin((d_in, d_emb), d_in), bias=np.zeros(d_emb))

    attention = AttentionParams(kind=cfg_attention)
    if cfg_attention == "multiplicative":
        attention.w_mult = lin((d_emb, d_emb), d_emb)
    elif cfg_attention == "additive":
        attention.w1 = lin((d_emb, d_att), d_emb)
        attention.w2 = lin((d_emb, d_att), d_emb)
        attention.w_score = lin((d_att,), d_att)

    raw = rng.normal(size=(n_bvf, d_emb))
    bvf = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    # start the gate steep enough that score differences between good and
    # bad pairs move it, and biased toward keeping pairs early on
    a_adv = np.array([4.0, -4.0]) if cfg_input_mode == "concat" else np.array([4.0])
    disc = DiscriminatorParams(
        bvf=bvf, a_adv=a_adv, b_adv=np.array([-0.4]), input_mode=cfg_input_mode
    )
    return ModelParams(
        language=language,
        vision=vision,
        attention=attention,
        disc=disc,
        a_lvc=np.array([1.0]),
        b_lvc=np.array([0.0]),
    )


def embed(channel, x):
    """l2norm(relu(x @ W + b)) over the last axis.

    If ReLU zeroes every unit the embedding is the zero vector, not an
    error; downstream scores with it are simply 0.
    """
    pre = x @ channel.weight + channel.bias
    act = np.maximum(pre, 0.0)
    norm = np.linalg.norm(act, axis=-1, keepdims=True)
    return np.divide(act, norm, out=np.zeros_like(act), where=norm > 0)


def attention_scores(attention, s, h):
    """Raw frame scores e for one clip: s (E,), h (F, E) -> (F,)."""
    if attention.kind == "uniform":
        return np.zeros(h.shape[0])
    if attention.kind == "dot":
        return h @ s
    if attention.kind == "multiplicative":
        return h @ (attention.w_mult.T @ s)
    if attention.kind == "additive":
        t = np.tanh(s @ attention.w1 + h @ attention.w2)  # (F, A)
        return t @ attention.w_score
    raise ModelError(f"unknown attention kind {attention.kind!r}")


def softmax(e):
    m = e - e.max(axis=-1, keepdims=True)
    w = np.exp(m)
    return w / w.sum(axis=-1, keepdims=True)


def attend(attention, s, h):
    """Pool frames into one video vector; returns (v, alpha)."""
    alpha = softmax(attention_scores(attention, s, h))
    return alpha @ h, alpha


def pair_scores(params, s, v):
    """(p_lvc, p_adv): sentence-video score and best background score."""
    p_lvc = float(s @ v)
    p_adv = float(np.max(params.disc.bvf @ s))
    return p_lvc, p_adv


def adv_logit(disc, p_lvc, p_adv):
    """Gate logit from the two pair scores, per the input mode."""
    if disc.input_mode == "residual":
        return float(disc.a_adv[0] * (p_adv - p_lvc) + disc.b_adv[0])
    if disc.input_mode == "concat":
        return float(disc.a_adv[0] * p_adv + disc.a_adv[1] * p_lvc + disc.b_adv[0])
    if disc.input_mode == "adv_only":
        return float(disc.a_adv[0] * p_adv + disc.b_adv[0])
    raise ModelError(f"unknown discriminator input mode {disc.input_mode!r}")


def sample_gumbel(rng, size=None):
    u = rng.uniform(low=np.finfo(float).tiny, high=1.0, size=size)
    return -np.log(-np.log(u))


def sample_gate(f_adv, tau, sampler, rng=None, gumbels=None):
    """Draw the keep/discard decision for logits (0, f_adv).

    gumbel_hard perturbs both logits with Gumbel(0,1) noise and takes the
    argmax; its marginal P(z=1) is sigma(f_adv) for any tau. The returned
    soft_weight is the softmax weight of the discard side at temperature
    tau. softmax_soft skips the noise: soft_weight = sigma(f_adv / tau)
    and z is just the induced hard call (weight > 1/2).
    """
    if sampler not in SAMPLER_KINDS:
        raise ModelError(f"unknown sampler {sampler!r}")
    if tau <= 0:
        raise ModelError("tau must be > 0")
    if sampler == "softmax_soft":
        w = float(sigmoid(f_adv / tau))
        return int(w > 0.5), w
    if gumbels is None:
        if rng is None:
            raise ModelError("gumbel_hard needs an rng or pre-drawn gumbels")
        gumbels = sample_gumbel(rng, size=2)
    g0, g1 = float(gumbels[0]), float(gumbels[1])
    w = float(sigmoid((f_adv + g1 - g0) / tau))
    z = int(f_adv + g1 > g0)
    return z, w


def init_bvf(params, clips, rng):
    """Seed the background bank from the current vision channel.

    Every training clip is embedded with uniform frame pooling, the pool
    is randomly split into n_bvf groups, and each bank row becomes the
    normalized group mean. Groups that die under ReLU fall back to a
    random unit vector.
    """
    n_bvf = params.disc.bvf.shape[0]
    if not clips:
        raise ModelError("cannot seed background bank from an empty corpus")
    pooled = np.stack([embed(params.vision, c.frames_raw).mean(axis=0) for c in clips])
    groups = np.array_split(rng.permutation(len(clips)), n_bvf)
    bank = np.empty_like(params.disc.bvf)
    for i, g in enumerate(groups):
        mean = pooled[g].mean(axis=0) if g.size else np.zeros(bank.shape[1])
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            mean = rng.normal(size=bank.shape[1])
            norm = np.linalg.norm(mean)
        bank[i] = mean / norm
    params.disc.bvf = bank


def param_tensors(params):
    """Ordered name -> array view of every trainable tensor."""
    out = {
        "language.weight": params.language.weight,
        "language.bias": params.language.bias,
        "vision.weight": params.vision.weight,
        "vision.bias": params.vision.bias,
    }
    att = params.attention
    if att.kind == "multiplicative":
        out["attention.w_mult"] = att.w_mult
    elif att.kind == "additive":
        out["attention.w1"] = att.w1
        out["attention.w2"] = att.w2
        out["attention.w_score"] = att.w_score
    out["disc.bvf"] = params.disc.bvf
    out["disc.a_adv"] = params.disc.a_adv
    out["disc.b_adv"] = params.disc.b_adv
    out["a_lvc"] = params.a_lvc
    out["b_lvc"] = params.b_lvc
    return out


def save_checkpoint(params, path):
    """Serialize all tensors plus the metadata needed to rebuild them."""
    att = params.attention
    meta = {
        "attention_kind": att.kind,
        "input_mode": params.disc.input_mode,
        "d_in": int(params.language.weight.shape[0]),
        "d_emb": int(params.language.weight.shape[1]),
        "d_att": int(att.w_score.shape[0]) if att.kind == "additive" else 0,
        "n_bvf": int(params.disc.bvf.shape[0]),
    }
    tensors = {
        name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        for name, arr in param_tensors(params).items()
    }
    doc = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "meta": meta,
        "tensors": tensors,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild ModelParams from save_checkpoint output; exact round-trip."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid checkpoint: {exc}") from exc
    if doc.get("format") != PARAMS_FORMAT:
        raise ModelError(f"not a {PARAMS_FORMAT} file")
    if doc.get("version") != PARAMS_VERSION:
        raise ModelError(f"unsupported checkpoint version {doc.get('version')!r}")
    meta = doc["meta"]
    tensors = {}
    for name, entry in doc["tensors"].items():
        arr = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        tensors[name] = arr

    def take(name, shape=None):
        if name not in tensors:
            raise ModelError(f"checkpoint missing tensor {name!r}")
        arr = tensors[name]
        if shape is not None and tuple(arr.shape) != tuple(shape):
            raise ModelError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        return arr

    d_in, d_emb = meta["d_in"], meta["d_emb"]
    kind = meta["attention_kind"]
    if kind not in ATTENTION_KINDS:
        raise ModelError(f"unknown attention kind {kind!r}")
    attention = AttentionParams(kind=kind)
    if kind == "multiplicative":
        attention.w_mult = take("attention.w_mult", (d_emb, d_emb))
    elif kind == "additive":
        d_att = meta["d_att"]
        attention.w1 = take("attention.w1", (d_emb, d_att))
        attention.w2 = take("attention.w2", (d_emb, d_att))
        attention.w_score = take("attention.w_score", (d_att,))
    mode = meta["input_mode"]
    if mode not in INPUT_MODES:
        raise ModelError(f"unknown discriminator input mode {mode!r}")
    a_len = 2 if mode == "concat" else 1
    return ModelParams(
        language=ChannelParams(
            weight=take("language.weight", (d_in, d_emb)),
            bias=take("language.bias", (d_emb,)),
        ),
        vision=ChannelParams(
            weight=take("vision.weight", (d_in, d_emb)),
            bias=take("vision.bias", (d_emb,)),
        ),
        attention=attention,
        disc=DiscriminatorParams(
            bvf=take("disc.bvf", (meta["n_bvf"], d_emb)),
            a_adv=take("disc.a_adv", (a_len,)),
            b_adv=take("disc.b_adv", (1,)),
            input_mode=mode,
        ),
        a_lvc=take("a_lvc", (1,)),
        b_lvc=take("b_lvc", (1,)),
    )

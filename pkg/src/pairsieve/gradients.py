"""Batched forward pass and hand-derived exact gradients.

The batch objective mixes a correspondence loss on kept pairs with an
adversarial loss on discarded pairs. Discard decisions are discrete, so
the gate trains through a straight-through surrogate: the hard decision
sets the forward value while the smooth gate weight carries the backward
signal. With the gate noise held fixed, everything below is the exact
derivative of that surrogate, which is what the finite-difference tests
check.

Objective by sampler (z = hard call, w = smooth gate weight, w0 = w at
the current point treated as a constant, L_adv = softplus(gate logit)):

  gumbel_hard  mean_i[(1 - z_i - w_i + w0_i) * lvc_i + (z_i + w_i - w0_i) * L_adv_i]
  softmax_soft mean_i[(1 - w_i) * lvc_i + w_i * L_adv_i]

For the bce loss kind lvc_i is the per-pair match loss. For the triplet
kind the lvc part is instead a hinge loss over the gated-in positive
pairs: their similarity matrix scores sentence a against clip b's own
pooled vector (pooled under sentence b), each anchor hinges against its
row and column hardest negatives, anchors are weighted by their keep
weight, and the hinges average over members. During the warm-up phase
the discriminator is frozen: the gate still filters pairs but
contributes no gradient, and the adversarial term is not optimized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import bce_loss, sigmoid, softplus
from .model import ModelError, param_tensors, sample_gumbel, softmax

PHASES = ("freeze", "joint")


class NumericError(RuntimeError):
    """Non-finite value produced during a training step."""


@dataclass
class PairBatchArrays:
    """Raw features for one batch: sentences, sampled frames, labels."""

    xs: np.ndarray      # (B, d_in)
    xf: np.ndarray      # (B, F, d_in)
    labels: np.ndarray  # (B,) 1 = matched pair

    def validate(self):
        if self.xs.ndim != 2 or self.xf.ndim != 3 or self.labels.ndim != 1:
            raise ModelError("batch arrays have wrong ranks")
        b = self.xs.shape[0]
        if self.xf.shape[0] != b or self.labels.shape[0] != b:
            raise ModelError("batch arrays disagree on batch size")
        if self.xf.shape[2] != self.xs.shape[1]:
            raise ModelError("sentence and frame feature dimensions differ")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ModelError("labels must be 0 or 1")


@dataclass
class BatchForward:
    """Everything the training loop and the tests need from one forward."""

    s: np.ndarray            # (B, E) sentence embeddings
    H: np.ndarray            # (B, F, E) frame embeddings
    alpha: np.ndarray        # (B, F) attention weights
    v: np.ndarray            # (B, E) pooled video embeddings
    p_lvc: np.ndarray        # (B,) pair scores
    f_lvc: np.ndarray        # (B,) match logits
    p_adv: np.ndarray        # (B,) best background scores
    f_adv: np.ndarray        # (B,) gate logits
    z: np.ndarray            # (B,) hard gate calls
    w: np.ndarray            # (B,) smooth gate weights
    gumbels: np.ndarray | None
    keep: np.ndarray         # (B,) lvc mixing weight: 1-z hard, 1-w soft
    pair_lvc_loss: np.ndarray | None  # (B,) bce kind only
    pair_adv_loss: np.ndarray         # (B,)
    member_idx: np.ndarray   # (M,) triplet anchors (empty for bce kind)
    member_hinges: np.ndarray  # (M,) per-anchor row+col hinge sums
    member_keep: np.ndarray    # (M,) anchor weights at the current point
    loss_lvc: float          # kept-weighted mean match loss (reporting)
    loss_adv: float          # discard-weighted mean adversarial loss (reporting)
    loss: float              # the optimized objective


def _embed_cached(weight, bias, x):
    pre = x @ weight + bias
    act = np.maximum(pre, 0.0)
    norm = np.linalg.norm(act, axis=-1, keepdims=True)
    out = np.divide(act, norm, out=np.zeros_like(act), where=norm > 0)
    return out, pre, norm


def _l2relu_backward(d_out, unit, norm, pre):
    # through y = act / ||act|| then relu; zero where the vector died
    inner = (unit * d_out).sum(axis=-1, keepdims=True)
    d_act = np.divide(d_out - unit * inner, norm,
                      out=np.zeros_like(d_out), where=norm > 0)
    return d_act * (pre > 0)


def _attention_forward(att, s, H):
    """Per-pair scores e (B, F) plus the cache backward needs."""
    cache = {}
    if att.kind == "uniform":
        e = np.zeros(H.shape[:2])
    elif att.kind == "dot":
        e = np.einsum("be,bfe->bf", s, H)
    elif att.kind == "multiplicative":
        u = s @ att.w_mult
        e = np.einsum("be,bfe->bf", u, H)
        cache["u"] = u
    elif att.kind == "additive":
        p = s @ att.w1
        q = H @ att.w2
        t = np.tanh(p[:, None, :] + q)
        e = t @ att.w_score
        cache["t"] = t
    else:
        raise ModelError(f"unknown attention kind {att.kind!r}")
    return e, cache


def _attention_backward(att, de, s, H, cache, ds, dH, grads):
    if att.kind == "dot":
        ds += np.einsum("bf,bfe->be", de, H)
        dH += de[:, :, None] * s[:, None, :]
    elif att.kind == "multiplicative":
        g = np.einsum("bf,bfe->be", de, H)
        ds += g @ att.w_mult.T
        dH += de[:, :, None] * cache["u"][:, None, :]
        grads["attention.w_mult"] += s.T @ g
    elif att.kind == "additive":
        t = cache["t"]
        dt = de[:, :, None] * att.w_score * (1.0 - t * t)
        grads["attention.w_score"] += np.einsum("bf,bfa->a", de, t)
        dp = dt.sum(axis=1)
        ds += dp @ att.w1.T
        grads["attention.w1"] += s.T @ dp
        dH += dt @ att.w2.T
        grads["attention.w2"] += np.einsum("bfe,bfa->ea", H, dt)


def _adv_logit_batch(disc, p_lvc, p_adv):
    if disc.input_mode == "residual":
        return disc.a_adv[0] * (p_adv - p_lvc) + disc.b_adv[0]
    if disc.input_mode == "concat":
        return disc.a_adv[0] * p_adv + disc.a_adv[1] * p_lvc + disc.b_adv[0]
    if disc.input_mode == "adv_only":
        return disc.a_adv[0] * p_adv + disc.b_adv[0]
    raise ModelError(f"unknown discriminator input mode {disc.input_mode!r}")


def _run_forward(params, batch, cfg, phase, rng, gumbels, z_override):
    if phase not in PHASES:
        raise ModelError(f"unknown phase {phase!r}")
    batch.validate()
    b = batch.xs.shape[0]
    labels = batch.labels.astype(float)

    s, pre_s, ns = _embed_cached(params.language.weight, params.language.bias, batch.xs)
    H, pre_h, nh = _embed_cached(params.vision.weight, params.vision.bias, batch.xf)

    e, att_cache = _attention_forward(params.attention, s, H)
    alpha = softmax(e)
    v = np.einsum("bf,bfe->be", alpha, H)
    p_lvc = np.einsum("be,be->b", s, v)
    f_lvc = params.a_lvc[0] * p_lvc + params.b_lvc[0]

    disc_on = cfg.discriminator_enabled
    hard = cfg.sampler_kind == "gumbel_hard"
    if disc_on:
        q = s @ params.disc.bvf.T
        jstar = q.argmax(axis=1)
        p_adv = q[np.arange(b), jstar]
        f_adv = _adv_logit_batch(params.disc, p_lvc, p_adv)
        if hard:
            if gumbels is None:
                if rng is None:
                    raise ModelError("gumbel_hard needs an rng or pre-drawn gumbels")
                gumbels = sample_gumbel(rng, size=(b, 2))
            margin = f_adv + gumbels[:, 1] - gumbels[:, 0]
            z = (margin > 0).astype(int)
            w = sigmoid(margin / cfg.tau)
        else:
            w = sigmoid(f_adv / cfg.tau)
            z = (w > 0.5).astype(int)
        if z_override is not None:
            z = np.asarray(z_override, dtype=int)
            if z.shape != (b,) or not np.all((z == 0) | (z == 1)):
                raise ModelError("z_override must be a 0/1 vector of batch length")
        pair_adv = softplus(f_adv)
        keep = 1.0 - z.astype(float) if hard else 1.0 - w
    else:
        jstar = None
        p_adv = np.zeros(b)
        f_adv = np.zeros(b)
        z = np.zeros(b, dtype=int)
        w = np.zeros(b)
        pair_adv = np.zeros(b)
        keep = np.ones(b)

    if cfg.loss_kind == "bce":
        pair_lvc = bce_loss(labels, f_lvc)
        lvc_term = float((keep * pair_lvc).sum() / b)
        member_idx = np.array([], dtype=int)
        hinges = np.array([])
        member_keep = np.array([])
        trip_cache = None
    else:
        pair_lvc = None
        pos_idx = np.flatnonzero(batch.labels == 1)
        if disc_on and hard:
            member_idx = pos_idx[z[pos_idx] == 0]
        else:
            member_idx = pos_idx
        member_keep = keep[member_idx] if (disc_on and not hard) else np.ones(member_idx.shape[0])
        if member_idx.shape[0] >= 2:
            S = s[member_idx] @ v[member_idx].T  # sentence a against clip b's own pooled vector
            m = S.shape[0]
            pos = np.diag(S).copy()
            off = S.copy()
            np.fill_diagonal(off, -np.inf)
            jr = off.argmax(axis=1)
            jc = off.argmax(axis=0)
            r_h = np.maximum(0.0, cfg.triplet_margin + off[np.arange(m), jr] - pos)
            c_h = np.maximum(0.0, cfg.triplet_margin + off[jc, np.arange(m)] - pos)
            hinges = r_h + c_h
            trip_cache = {"jr": jr, "jc": jc, "r_active": r_h > 0, "c_active": c_h > 0}
            lvc_term = float((member_keep * hinges).sum() / m)
        else:
            hinges = np.zeros(member_idx.shape[0])
            trip_cache = None
            lvc_term = 0.0

    joint = phase == "joint"
    gate = 1.0 - keep
    adv_term = float((gate * pair_adv).sum() / b) if (disc_on and joint) else 0.0
    loss = lvc_term + adv_term

    if not np.isfinite(loss):
        raise NumericError("non-finite batch loss; check learning rate and inputs")

    kept_mass = keep.sum()
    gated_mass = gate.sum()
    if cfg.loss_kind == "bce":
        loss_lvc = float((keep * pair_lvc).sum() / kept_mass) if kept_mass > 0 else 0.0
    else:
        m = member_idx.shape[0]
        loss_lvc = float((member_keep * hinges).sum() / m) if m >= 2 else 0.0
    loss_adv = float((gate * pair_adv).sum() / gated_mass) if (disc_on and gated_mass > 0) else 0.0

    fwd = BatchForward(
        s=s, H=H, alpha=alpha, v=v, p_lvc=p_lvc, f_lvc=f_lvc,
        p_adv=p_adv, f_adv=f_adv, z=z, w=w, gumbels=gumbels, keep=keep,
        pair_lvc_loss=pair_lvc, pair_adv_loss=pair_adv,
        member_idx=member_idx, member_hinges=hinges, member_keep=member_keep,
        loss_lvc=loss_lvc, loss_adv=loss_adv, loss=loss,
    )
    cache = {
        "pre_s": pre_s, "ns": ns, "pre_h": pre_h, "nh": nh,
        "att": att_cache, "trip": trip_cache, "jstar": jstar, "labels": labels,
    }
    return fwd, cache


def forward_batch(params, batch, cfg, phase, rng=None, gumbels=None, z_override=None):
    """Run the batch forward pass; see the module docstring for the objective."""
    fwd, _ = _run_forward(params, batch, cfg, phase, rng, gumbels, z_override)
    return fwd


def compute_gradients(params, batch, cfg, phase, rng=None, gumbels=None, z_override=None):
    """Forward plus exact gradients of the surrogate objective.

    Returns (fwd, grads) where grads has one entry per trainable tensor,
    zeros included. In the freeze phase the discriminator tensors get
    exactly zero gradient and the gate contributes no pathway.
    """
    fwd, cache = _run_forward(params, batch, cfg, phase, rng, gumbels, z_override)
    b = batch.xs.shape[0]
    labels = cache["labels"]
    att = params.attention
    disc = params.disc
    disc_on = cfg.discriminator_enabled
    hard = cfg.sampler_kind == "gumbel_hard"
    joint = phase == "joint"

    grads = {name: np.zeros_like(arr) for name, arr in param_tensors(params).items()}
    ds = np.zeros_like(fwd.s)
    dH = np.zeros_like(fwd.H)
    dp_lvc = np.zeros(b)

    # match-loss pathway (bce kind)
    if cfg.loss_kind == "bce":
        a_coef = fwd.keep / b
        df_lvc = a_coef * (sigmoid(fwd.f_lvc) - labels)
        grads["a_lvc"][0] += float(df_lvc @ fwd.p_lvc)
        grads["b_lvc"][0] += float(df_lvc.sum())
        dp_lvc += df_lvc * params.a_lvc[0]

    # adversarial loss and gate pathway (joint phase only)
    if disc_on and joint:
        b_coef = (fwd.z.astype(float) if hard else fwd.w) / b
        dw_coef = fwd.pair_adv_loss.copy()
        if cfg.loss_kind == "bce":
            dw_coef -= fwd.pair_lvc_loss
        dw_coef /= b
        m = fwd.member_idx.shape[0]
        if cfg.loss_kind == "triplet" and m >= 2:
            dw_coef[fwd.member_idx] -= fwd.member_hinges / m
        df_adv = b_coef * sigmoid(fwd.f_adv) + dw_coef * fwd.w * (1.0 - fwd.w) / cfg.tau

        if disc.input_mode == "residual":
            grads["disc.a_adv"][0] += float(df_adv @ (fwd.p_adv - fwd.p_lvc))
            grads["disc.b_adv"][0] += float(df_adv.sum())
            dp_adv = df_adv * disc.a_adv[0]
            dp_lvc -= df_adv * disc.a_adv[0]
        elif disc.input_mode == "concat":
            grads["disc.a_adv"][0] += float(df_adv @ fwd.p_adv)
            grads["disc.a_adv"][1] += float(df_adv @ fwd.p_lvc)
            grads["disc.b_adv"][0] += float(df_adv.sum())
            dp_adv = df_adv * disc.a_adv[0]
            dp_lvc += df_adv * disc.a_adv[1]
        else:
            grads["disc.a_adv"][0] += float(df_adv @ fwd.p_adv)
            grads["disc.b_adv"][0] += float(df_adv.sum())
            dp_adv = df_adv * disc.a_adv[0]

        jstar = cache["jstar"]
        np.add.at(grads["disc.bvf"], jstar, dp_adv[:, None] * fwd.s)
        ds += dp_adv[:, None] * disc.bvf[jstar]

    # pair score pathway
    ds += dp_lvc[:, None] * fwd.v
    dv = dp_lvc[:, None] * fwd.s

    # triplet matrix: S = Sm @ Vm.T over members, feeding the same ds/dv
    trip = cache["trip"]
    if cfg.loss_kind == "triplet" and trip is not None:
        m = fwd.member_idx.shape[0]
        coeff = fwd.member_keep / m
        dS = np.zeros((m, m))
        idx = np.arange(m)
        jr, jc = trip["jr"], trip["jc"]
        ra, ca = trip["r_active"], trip["c_active"]
        dS[idx[ra], jr[ra]] += coeff[ra]
        dS[jc[ca], idx[ca]] += coeff[ca]
        dS[idx, idx] -= coeff * ra + coeff * ca
        ds[fwd.member_idx] += dS @ fwd.v[fwd.member_idx]
        dv[fwd.member_idx] += dS.T @ fwd.s[fwd.member_idx]

    # attention pooling backward for every pair
    dalpha = np.einsum("be,bfe->bf", dv, fwd.H)
    dH += fwd.alpha[:, :, None] * dv[:, None, :]
    if att.kind != "uniform":
        de = fwd.alpha * (dalpha - (fwd.alpha * dalpha).sum(axis=1, keepdims=True))
        _attention_backward(att, de, fwd.s, fwd.H, cache["att"], ds, dH, grads)

    # shared encoder backward
    dpre_s = _l2relu_backward(ds, fwd.s, cache["ns"], cache["pre_s"])
    grads["language.weight"] += batch.xs.T @ dpre_s
    grads["language.bias"] += dpre_s.sum(axis=0)
    dpre_h = _l2relu_backward(dH, fwd.H, cache["nh"], cache["pre_h"])
    grads["vision.weight"] += np.einsum("bfd,bfe->de", batch.xf, dpre_h)
    grads["vision.bias"] += dpre_h.sum(axis=(0, 1))

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    return fwd, grads

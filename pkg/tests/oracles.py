"""Shared test oracles: a frozen-noise surrogate objective and central
finite differences over it.

The analytic gradients are exact for the objective in which the gate's
random draw is pinned: the hard call z and the gumbel pair keep their
sampled values while the smooth gate weight w tracks the parameters
(straight-through). surrogate_loss rebuilds that objective from a
forward pass, so finite differences can probe it one coordinate at a
time and the comparison is meaningful.
"""

from __future__ import annotations

import numpy as np

from pairsieve.config import TrainConfig
from pairsieve.gradients import PairBatchArrays, compute_gradients, forward_batch
from pairsieve.model import init_model, param_tensors

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_TOL = 1e-7


def surrogate_loss(params, batch, cfg, phase, frozen):
    """Objective value with the gate noise pinned to `frozen`.

    frozen = (z0, w0, gumbels) captured at the base point. Mirrors the
    gradient code exactly: hard sampler weights the match loss by
    1 - z0 - w + w0 and the adversarial loss by z0 + w - w0; the soft
    sampler uses 1 - w and w; the freeze phase holds the weights fixed
    and drops the adversarial term.
    """
    z0, w0, gumbels = frozen
    fwd = forward_batch(params, batch, cfg, phase, gumbels=gumbels, z_override=z0)
    b = batch.xs.shape[0]
    hard = cfg.sampler_kind == "gumbel_hard"
    joint = phase == "joint"
    if not cfg.discriminator_enabled:
        keep = np.ones(b)
        gate = np.zeros(b)
    elif not joint:
        keep = 1.0 - z0 if hard else 1.0 - w0
        gate = np.zeros(b)
    elif hard:
        keep = 1.0 - z0 - fwd.w + w0
        gate = z0 + fwd.w - w0
    else:
        keep = 1.0 - fwd.w
        gate = fwd.w

    if cfg.loss_kind == "bce":
        lvc = float((keep * fwd.pair_lvc_loss).sum() / b)
    else:
        m = fwd.member_idx.shape[0]
        lvc = float((keep[fwd.member_idx] * fwd.member_hinges).sum() / m) if m >= 2 else 0.0
    adv = 0.0
    if cfg.discriminator_enabled and joint:
        adv = float((gate * fwd.pair_adv_loss).sum() / b)
    return lvc + adv


def finite_difference(fn, arr, h=FD_STEP):
    """Central differences of the scalar fn() over every entry of arr."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        hi = fn()
        arr[idx] = orig - h
        lo = fn()
        arr[idx] = orig
        g[idx] = (hi - lo) / (2.0 * h)
    return g


def gradient_mismatches(params, batch, cfg, phase, rng):
    """Compare analytic gradients against finite differences.

    Returns a list of (tensor name, index, analytic, numeric) tuples for
    every coordinate outside tolerance; an empty list means agreement.
    """
    fwd, grads = compute_gradients(params, batch, cfg, phase, rng=rng)
    gumbels = None if fwd.gumbels is None else fwd.gumbels.copy()
    frozen = (fwd.z.copy(), fwd.w.copy(), gumbels)
    base = surrogate_loss(params, batch, cfg, phase, frozen)
    if abs(base - fwd.loss) > 1e-12 * max(1.0, abs(fwd.loss)):
        raise AssertionError(
            f"surrogate does not reproduce the forward loss: {base!r} vs {fwd.loss!r}"
        )
    bad = []
    for name, arr in param_tensors(params).items():
        num = finite_difference(
            lambda: surrogate_loss(params, batch, cfg, phase, frozen), arr
        )
        ana = grads[name]
        err = np.abs(ana - num)
        tol = np.maximum(ABS_TOL, REL_TOL * np.maximum(np.abs(ana), np.abs(num)))
        for idx in np.argwhere(err > tol):
            i = tuple(int(x) for x in idx)
            bad.append((name, i, float(ana[i]), float(num[i])))
    return bad


def random_problem(rng, attention="dot", input_mode="residual",
                   sampler="gumbel_hard", loss="bce", disc_on=True,
                   d_in=4, d_emb=4, n_frames=2, batch=4, n_bvf=2):
    """A small random model plus one balanced batch of raw features."""
    cfg = TrainConfig(
        attention_kind=attention, input_mode=input_mode, sampler_kind=sampler,
        loss_kind=loss, discriminator_enabled=disc_on, batch_size=batch,
        d_emb=d_emb, bvf_count=n_bvf, n_f=n_frames,
    )
    params = init_model(d_in, d_emb, attention, input_mode, n_bvf, rng)
    # keep most relu units clear of the kink, where central differences
    # measure the wrong thing
    params.language.bias += 0.3
    params.vision.bias += 0.3
    half = batch // 2
    arrays = PairBatchArrays(
        xs=rng.normal(size=(batch, d_in)),
        xf=rng.normal(size=(batch, n_frames, d_in)),
        labels=np.array([1] * half + [0] * (batch - half)),
    )
    return params, arrays, cfg

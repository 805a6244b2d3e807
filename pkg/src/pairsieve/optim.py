"""SGD with classical momentum; weight decay folds into the gradient
before the velocity update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)


def init_optimizer_state(tensors):
    return OptimizerState(velocity={name: np.zeros_like(arr) for name, arr in tensors.items()})


def sgd_step(tensors, grads, state, lr, momentum, weight_decay, frozen=()):
    """Update tensors in place.

    velocity <- momentum * velocity + (grad + weight_decay * param)
    param    <- param - lr * velocity

    Tensors named in frozen are skipped entirely: no decay, no velocity
    change, so a frozen tensor is bit-identical before and after.
    """
    for name, arr in tensors.items():
        if name in frozen:
            continue
        g = grads[name] + weight_decay * arr
        vel = state.velocity[name]
        vel *= momentum
        vel += g
        arr -= lr * vel

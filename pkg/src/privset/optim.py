"""Momentum SGD and Adam over lists of arrays.

Both return fresh parameter lists; inputs are never modified in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check(params, grads):
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("gradient shapes do not match parameters")


@dataclass
class SGDState:
    velocity: list


def sgd_init(params):
    return SGDState([np.zeros_like(p) for p in params])


def sgd_update(params, grads, lr, momentum=0.0, weight_decay=0.0, state=None):
    """Classic momentum SGD: v <- momentum * v + (g + wd * p); p <- p - lr * v."""
    _check(params, grads)
    state = state or sgd_init(params)
    new_params, new_vel = [], []
    for p, g, v in zip(params, grads, state.velocity):
        d = g + weight_decay * p if weight_decay else g
        v = momentum * v + d
        new_vel.append(v.astype(p.dtype, copy=False))
        new_params.append((p - lr * v).astype(p.dtype, copy=False))
    return new_params, SGDState(new_vel)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0


def adam_init(params):
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_update(params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
    _check(params, grads)
    state = state or adam_init(params)
    t = state.step + 1
    c1, c2 = 1 - beta1**t, 1 - beta2**t
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params.append((p - step).astype(p.dtype, copy=False))
        ms.append(m.astype(p.dtype, copy=False))
        vs.append(v.astype(p.dtype, copy=False))
    return new_params, AdamState(ms, vs, t)

"""Plain gradient descent and Adam with the AMSGrad correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], alpha: float) -> dict[str, np.ndarray]:
    """p <- p - alpha * g, in place; returns params."""
    for k, p in params.items():
        p -= alpha * grads[k]
    return params


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    v_hat: dict[str, np.ndarray] = field(default_factory=dict)


def adam_amsgrad_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    alpha: float,
) -> tuple[AdamState, dict[str, np.ndarray]]:
    """One AMSGrad update, in place on params and state.

    The second moment used for the step is the running maximum of the
    bias-corrected estimate, so the effective per-coordinate step size never
    grows.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
            state.v_hat[k] = np.zeros_like(p)
        m, v, vh = state.m[k], state.v[k], state.v_hat[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        np.maximum(vh, v / c2, out=vh)
        p -= alpha * (m / c1) / (np.sqrt(vh) + state.eps)
    return state, params

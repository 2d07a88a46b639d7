"""Weight init and the two optimisers used by the training loops.

Adam follows the standard bias-corrected form.  The inner adaptation loop
uses plain SGD (out-of-place, so the update itself stays differentiable);
Adam state updates are ordinary numpy and never touch the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def xavier_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Glorot-uniform draw on [-sqrt(6/(fan_in+fan_out)), +...]."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fans must be positive, got {fan_in}, {fan_out}")
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return param - lr * grad


@dataclass
class AdamState:
    """First/second moment buffers for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n: int, dtype=np.float64, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype), 0, beta1, beta2, eps)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns the new params."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValueError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    state.t += 1
    g = grad.astype(state.m.dtype, copy=False)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    step = lr * mhat / (np.sqrt(vhat) + state.eps)
    return (param - step.astype(param.dtype, copy=False)).astype(param.dtype, copy=False)

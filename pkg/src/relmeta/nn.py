"""Neural net ops assembled from the tensor primitives.

Convolution and pooling are expressed as compositions (pad, sliding windows,
matmul / last-axis max) rather than bespoke kernels, so their backward and
double-backward passes come from the tape for free.  Batch norm keeps its
running statistics as a plain numpy side effect outside the graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    constant,
    exp,
    gather_last,
    log,
    matmul,
    max_last,
    maximum,
    pad2d,
    power,
    relu,
    reshape,
    slice2d,
    stop_gradient,
    tmean,
    transpose,
    tsum,
    windows,
)

__all__ = [
    "dense",
    "conv2d",
    "maxpool2d",
    "same_pads",
    "BatchNormState",
    "batchnorm2d",
    "dropout",
    "softmax_cross_entropy",
    "logits_to_predictions",
    "accuracy",
    "relu",
]


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (B, D) @ w (D, F) + b (F,)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"dense expects 2-d input/weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense input dim {x.shape[1]} != weight rows {w.shape[0]}")
    return matmul(x, w) + reshape(b, (1, b.size))


def same_pads(k: int) -> tuple[int, int]:
    """Asymmetric 'same' padding for stride-1 convolution with kernel k.

    Total pad k-1, split begin=(k-1)//2, end=k-1-begin, so even kernels pad
    one more at the bottom/right and the output keeps the input extent."""
    begin = (k - 1) // 2
    return begin, k - 1 - begin


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation of x (B, C, H, W) with w (F, C, kH, kW) plus bias (F,).

    padding is an int (symmetric) or ((top, bottom), (left, right))."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-d (B, C, H, W), got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-d (F, C, kH, kW), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d kernel channels {w.shape[1]} do not match input channels {x.shape[1]}"
        )
    F, C, kh, kw = w.shape
    xp = pad2d(x, padding, 0.0)
    B = x.shape[0]
    win = windows(xp, kh, kw, stride)          # (B, C, Ho, Wo, kh, kw)
    Ho, Wo = win.shape[2], win.shape[3]
    # one big GEMM: (B*Ho*Wo, C*kh*kw) @ (C*kh*kw, F)
    cols = reshape(transpose(win, (0, 2, 3, 1, 4, 5)), (B * Ho * Wo, C * kh * kw))
    wmat = transpose(reshape(w, (F, C * kh * kw)), (1, 0))
    out = matmul(cols, wmat) + reshape(b, (1, F))
    return transpose(reshape(out, (B, Ho, Wo, F)), (0, 3, 1, 2))


def maxpool2d(x: Tensor, k: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Max pooling over k x k windows; pads with -inf so edges pool honestly.

    With (k=3, stride=2, padding=1) the spatial extent halves, rounded up.
    Implemented as a left fold of pairwise maxima over the k*k shifted
    strided slices (no window materialisation); ties therefore resolve to
    the first window position in row-major order."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d input must be 4-d, got {x.shape}")
    xp = pad2d(x, padding, -np.inf)
    H, W = xp.shape[2], xp.shape[3]
    ho = (H - k) // stride + 1
    wo = (W - k) // stride + 1
    out = None
    for i in range(k):
        for j in range(k):
            piece = slice2d(xp, i, j, stride, ho, wo)
            out = piece if out is None else maximum(out, piece)
    return out


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (numpy, off-graph)."""

    mean: np.ndarray
    var: np.ndarray
    count: int = 0

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.mean.copy(), self.var.copy(), self.count)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState | None = None,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Channelwise batch norm for (B, C, H, W) tensors.

    training=True normalises by current-batch statistics (and, when a state
    is supplied, updates its running mean/var outside the graph);
    training=False normalises by the stored running statistics."""
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d input must be 4-d, got {x.shape}")
    C = x.shape[1]
    if gamma.size != C or beta.size != C:
        raise ShapeError(f"batchnorm2d affine params must have {C} entries")
    gshape = (1, C, 1, 1)
    gamma_r = reshape(gamma, gshape)
    beta_r = reshape(beta, gshape)
    if training:
        n = x.size // C
        mu = tsum(x, axis=(0, 2, 3), keepdims=True) * (1.0 / n)
        msq = tsum(x * x, axis=(0, 2, 3), keepdims=True) * (1.0 / n)
        var = msq - mu * mu
        if state is not None:
            # unbiased variance goes into the running buffer
            unbias = n / max(n - 1, 1)
            state.mean = ((1 - momentum) * state.mean + momentum * mu.data.reshape(C)).astype(state.mean.dtype)
            state.var = ((1 - momentum) * state.var + momentum * unbias * var.data.reshape(C)).astype(state.var.dtype)
            state.count += 1
        inv = power(var + eps, -0.5)
    else:
        if state is None:
            raise ValueError("batchnorm2d(training=False) needs running statistics")
        mu = constant(state.mean.reshape(gshape), x.dtype)
        inv = constant(1.0 / np.sqrt(state.var.reshape(gshape) + eps), x.dtype)
    # fold everything into one per-channel affine; only two passes over x
    scale = gamma_r * inv
    shift = beta_r - mu * scale
    return x * scale + shift


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with prob p, scale survivors by 1/(1-p).

    rng=None disables the op (identity), which is the eval-time path."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * constant(keep)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits).

    Shift-stabilised: the row max is subtracted through stop_gradient, so the
    value is exact and the tape stays clean for double backward."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-d (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {B}")
    if labels.dtype.kind not in "iu":
        raise TypeError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"labels out of range [0, {C})")
    m = stop_gradient(max_last(logits))                  # (B,)
    z = logits - reshape(m, (B, 1))
    lse = log(tsum(exp(z), axis=1))                      # (B,)
    picked = gather_last(z, labels.astype(np.int64))     # (B,)
    return tmean(lse - picked)


def logits_to_predictions(logits: Tensor | np.ndarray) -> np.ndarray:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=-1)


def accuracy(logits: Tensor | np.ndarray, labels: np.ndarray) -> float:
    preds = logits_to_predictions(logits)
    return float(np.mean(preds == np.asarray(labels)))

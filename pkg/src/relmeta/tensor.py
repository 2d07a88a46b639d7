"""Reverse-mode autodiff whose backward pass is itself differentiable.

A ``Tensor`` wraps a numpy array plus the closure that propagates gradients
to its parents.  The crucial property: every vector-Jacobian product below is
written in terms of *recorded* tensor ops, never raw numpy, so running
``grad(..., create_graph=True)`` produces gradient tensors that carry their
own tape.  Differentiating those again gives exact second-order gradients,
which is what the meta-learner needs for backprop through its inner updates.

The primitive set is deliberately closed under differentiation; each
primitive's VJP is built from other primitives (``windows``/``overlap_add``,
``pad2d``/``crop2d``, ``gather_last``/``scatter_last`` are adjoint pairs).
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op's contract."""


class NonFiniteError(ArithmeticError):
    """Raised when a guarded value contains NaN or infinity."""


# Graph recording is on unless suspended by no_grad().  Plain evaluation
# (validation forward passes) runs a lot faster without the tape.
_recording = [True]


@contextlib.contextmanager
def no_grad():
    _recording.append(False)
    try:
        yield
    finally:
        _recording.pop()


def is_recording() -> bool:
    return _recording[-1]


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    # keep numpy from hijacking `ndarray <op> Tensor`
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @classmethod
    def _node(cls, data: np.ndarray, parents: Sequence["Tensor"], vjp) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        if _recording[-1] and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = tuple(parents)
            t._vjp = vjp
        else:
            t.requires_grad = False
            t._parents = ()
            t._vjp = None
        return t

    # -- inspection -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, _as_tensor(1.0 / other, self.dtype))

    def __rtruediv__(self, other):
        return mul(_as_tensor(other, self.dtype), power(self, -1.0))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None and arr.dtype != dtype and arr.dtype.kind == "f":
        arr = arr.astype(dtype)
    if dtype is not None and arr.dtype.kind in "iub":
        arr = arr.astype(dtype)
    return Tensor(arr)


def constant(x, dtype=None) -> Tensor:
    """Wrap data as a non-differentiable tensor."""
    return _as_tensor(x, dtype)


# -- broadcasting helpers (differentiable) ---------------------------------

def sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce g by summation until it has the given (broadcast-source) shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (have, want) in enumerate(zip(g.shape, shape)) if want == 1 and have != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.shape != tuple(shape):
        raise ShapeError(f"cannot reduce shape {g.shape} to {tuple(shape)}")
    return g


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}: {e}") from None
    return Tensor._node(out, (a,), lambda g: (sum_to(g, a.shape),))


# -- arithmetic primitives -------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    return Tensor._node(out, (a, b), lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    return Tensor._node(out, (a, b), lambda g: (sum_to(g * b, a.shape), sum_to(g * a, b.shape)))


def neg(a: Tensor) -> Tensor:
    return Tensor._node(-a.data, (a,), lambda g: (neg(g),))


def power(a: Tensor, p) -> Tensor:
    """Elementwise a**p for a constant (python float) exponent."""
    if isinstance(p, Tensor):
        raise TypeError("power() exponent must be a constant, not a Tensor")
    p = float(p)
    out = a.data ** p
    return Tensor._node(out, (a,), lambda g: (g * (p * power(a, p - 1.0)),))


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def exp(a: Tensor) -> Tensor:
    out = Tensor._node(np.exp(a.data), (a,), None)
    if out.requires_grad:
        # capturing out keeps d(exp)/dx on the tape for higher-order passes
        out._vjp = lambda g: (g * out,)
    return out


def log(a: Tensor) -> Tensor:
    return Tensor._node(np.log(a.data), (a,), lambda g: (g * power(a, -1.0),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        # mask built lazily; constant w.r.t. the tape (zero at exactly 0)
        return (g * Tensor((a.data > 0).astype(g.dtype)),)

    return Tensor._node(out, (a,), vjp)


def stop_gradient(a: Tensor) -> Tensor:
    """Value of a, cut from the tape."""
    return Tensor(a.data)


# -- structural primitives -------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}: {e}") from None
    return Tensor._node(out, (a,), lambda g: (reshape(g, a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for ndim {a.ndim}")
    inv = tuple(int(i) for i in np.argsort(axes))
    out = np.transpose(a.data, axes)
    return Tensor._node(out, (a,), lambda g: (transpose(g, inv),))


def swap_last(a: Tensor) -> Tensor:
    """Transpose the last two axes (matrix transpose for stacks)."""
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = sum_to(matmul(g, swap_last(b)), a.shape)
        gb = sum_to(matmul(swap_last(a), g), b.shape)
        return (ga, gb)

    return Tensor._node(out, (a, b), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        norm_axis = tuple(range(a.ndim))
    elif isinstance(axis, int):
        norm_axis = (axis % a.ndim,)
    else:
        norm_axis = tuple(ax % a.ndim for ax in axis)
    out = np.sum(a.data, axis=norm_axis, keepdims=keepdims)
    kd_shape = tuple(1 if i in norm_axis else s for i, s in enumerate(a.shape))

    def vjp(g):
        if not keepdims:
            g = reshape(g, kd_shape)
        return (broadcast_to(g, a.shape),)

    return Tensor._node(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    s = tsum(a, axis=axis, keepdims=keepdims)
    return s * (s.size / a.size)


# -- spatial primitives ----------------------------------------------------

def _norm_pads(pads) -> tuple[tuple[int, int], tuple[int, int]]:
    if isinstance(pads, int):
        return ((pads, pads), (pads, pads))
    (t, b), (l, r) = pads
    return ((int(t), int(b)), (int(l), int(r)))


def pad2d(a: Tensor, pads, fill: float = 0.0) -> Tensor:
    """Pad the last two axes of a 4-d (B, C, H, W) tensor with a constant."""
    if a.ndim != 4:
        raise ShapeError(f"pad2d expects a 4-d tensor, got shape {a.shape}")
    (t, b), (l, r) = _norm_pads(pads)
    if min(t, b, l, r) < 0:
        raise ShapeError(f"negative padding {((t, b), (l, r))}")
    if (t, b, l, r) == (0, 0, 0, 0):
        return a
    B, C, H, W = a.shape
    out = np.full((B, C, H + t + b, W + l + r), fill, dtype=a.data.dtype)
    out[:, :, t : t + H, l : l + W] = a.data
    # gradient w.r.t. the constant fill region is discarded by the crop
    return Tensor._node(out, (a,), lambda g: (crop2d(g, ((t, b), (l, r))),))


def crop2d(a: Tensor, pads) -> Tensor:
    """Inverse of pad2d: strip a margin from the last two axes."""
    if a.ndim != 4:
        raise ShapeError(f"crop2d expects a 4-d tensor, got shape {a.shape}")
    (t, b), (l, r) = _norm_pads(pads)
    if (t, b, l, r) == (0, 0, 0, 0):
        return a
    B, C, H, W = a.shape
    out = np.ascontiguousarray(a.data[:, :, t : H - b, l : W - r])
    return Tensor._node(out, (a,), lambda g: (pad2d(g, ((t, b), (l, r)), 0.0),))


def windows(a: Tensor, kh: int, kw: int, stride: int) -> Tensor:
    """Extract sliding (kh, kw) windows from a (B, C, H, W) tensor.

    Output shape (B, C, Ho, Wo, kh, kw) with Ho = (H - kh)//stride + 1.
    The result is a strided view (zero copy); a consuming reshape pays for
    the materialisation exactly once.  Adjoint of overlap_add."""
    if a.ndim != 4:
        raise ShapeError(f"windows expects a 4-d tensor, got shape {a.shape}")
    B, C, H, W = a.shape
    if kh > H or kw > W:
        raise ShapeError(f"window ({kh}, {kw}) larger than input ({H}, {W})")
    view = np.lib.stride_tricks.sliding_window_view(a.data, (kh, kw), axis=(2, 3))
    out = view[:, :, ::stride, ::stride]

    def vjp(g):
        return (overlap_add(g, (H, W), stride),)

    return Tensor._node(out, (a,), vjp)


def overlap_add(a: Tensor, spatial: tuple[int, int], stride: int) -> Tensor:
    """Scatter-add (B, C, Ho, Wo, kh, kw) windows back onto an (H, W) grid.

    Adjoint of windows; windows(overlap_add(x)) recovers x only where
    windows tile disjointly, but the adjoint identity always holds."""
    if a.ndim != 6:
        raise ShapeError(f"overlap_add expects a 6-d tensor, got shape {a.shape}")
    B, C, Ho, Wo, kh, kw = a.shape
    H, W = spatial
    out = np.zeros((B, C, H, W), dtype=a.data.dtype)
    src = a.data
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += src[:, :, :, :, i, j]

    def vjp(g):
        return (windows(g, kh, kw, stride),)

    return Tensor._node(out, (a,), vjp)


def slice2d(a: Tensor, i0: int, j0: int, stride: int, ho: int, wo: int) -> Tensor:
    """Strided spatial slice a[:, :, i0::stride, j0::stride] of extent (ho, wo).

    Zero-copy view; the adjoint scatters back into a zero grid."""
    if a.ndim != 4:
        raise ShapeError(f"slice2d expects a 4-d tensor, got shape {a.shape}")
    B, C, H, W = a.shape
    if i0 + stride * (ho - 1) >= H or j0 + stride * (wo - 1) >= W:
        raise ShapeError(f"slice2d ({i0}, {j0}, s{stride}, {ho}x{wo}) exceeds ({H}, {W})")
    out = a.data[:, :, i0 : i0 + stride * ho : stride, j0 : j0 + stride * wo : stride]

    def vjp(g):
        return (unslice2d(g, (H, W), i0, j0, stride),)

    return Tensor._node(out, (a,), vjp)


def unslice2d(a: Tensor, spatial: tuple[int, int], i0: int, j0: int, stride: int) -> Tensor:
    """Place a (B, C, ho, wo) block onto a zeroed (H, W) grid; adjoint of slice2d."""
    if a.ndim != 4:
        raise ShapeError(f"unslice2d expects a 4-d tensor, got shape {a.shape}")
    B, C, ho, wo = a.shape
    H, W = spatial
    out = np.zeros((B, C, H, W), dtype=a.data.dtype)
    out[:, :, i0 : i0 + stride * ho : stride, j0 : j0 + stride * wo : stride] = a.data

    def vjp(g):
        return (slice2d(g, i0, j0, stride, ho, wo),)

    return Tensor._node(out, (a,), vjp)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max of same-shape tensors; ties route gradient to a."""
    if a.shape != b.shape:
        raise ShapeError(f"maximum needs matching shapes, got {a.shape}, {b.shape}")
    out = np.maximum(a.data, b.data)

    def vjp(g):
        m = (a.data >= b.data).astype(g.dtype)
        return (g * Tensor(m), g * Tensor(1.0 - m))

    return Tensor._node(out, (a, b), vjp)


# -- last-axis max (exact adjoint via index capture) -----------------------

def max_last(a: Tensor) -> Tensor:
    """Max over the last axis; ties resolve to the first occurrence."""
    if a.ndim < 1:
        raise ShapeError("max_last needs ndim >= 1")
    idx = np.argmax(a.data, axis=-1)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        return (scatter_last(g, idx, a.shape[-1]),)

    return Tensor._node(out, (a,), vjp)


def gather_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one element per row along the last axis."""
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise ShapeError(f"gather_last index shape {idx.shape} != {a.shape[:-1]}")
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        return (scatter_last(g, idx, a.shape[-1]),)

    return Tensor._node(out, (a,), vjp)


def scatter_last(a: Tensor, idx: np.ndarray, width: int) -> Tensor:
    """Place each element of a at position idx of a new, zero last axis."""
    idx = np.asarray(idx)
    if idx.shape != a.shape:
        raise ShapeError(f"scatter_last index shape {idx.shape} != {a.shape}")
    out = np.zeros(a.shape + (width,), dtype=a.data.dtype)
    np.put_along_axis(out, idx[..., None], a.data[..., None], axis=-1)

    def vjp(g):
        return (gather_last(g, idx),)

    return Tensor._node(out, (a,), vjp)


# -- backward pass ---------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the recorded graph (parents before node)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar output w.r.t. each tensor in wrt.

    With create_graph=True the returned gradients are recorded tensors and
    can be differentiated again (the whole point of this module).  Tensors
    in wrt that the output does not depend on get zero gradients."""
    if output.data.size != 1:
        raise ShapeError(f"grad() needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return [Tensor(np.zeros_like(w.data)) for w in wrt]

    keep = {id(w) for w in wrt}
    grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}

    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(_topo_order(output)):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            if id(node) not in keep:
                del grads[id(node)]
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg

    out: list[Tensor] = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            g = Tensor(np.zeros_like(w.data))
        elif g.shape != w.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {w.shape}")
        out.append(g)
    return out


# -- guards ----------------------------------------------------------------

def ensure_finite(x, what: str = "value"):
    """Raise NonFiniteError if x (Tensor or ndarray) has NaN/inf entries."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NonFiniteError(f"{what} contains {bad} non-finite entries")
    return x


def astuple(x: Iterable[Tensor]) -> tuple[Tensor, ...]:
    return tuple(x)

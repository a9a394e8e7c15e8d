"""Reverse-mode automatic differentiation on numpy arrays.

A single module-level :class:`Tape` records every differentiable op in execution
order. ``backward`` replays the records strictly in reverse, accumulating
gradients into ``Tensor.grad``. The tape is dynamic: each forward pass rebuilds
it, and a second ``backward`` without an intervening forward is an error.

Everything is float64. Single-threaded by design; there is one active tape.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

Arrayish = Union["Tensor", np.ndarray, float, int]


class TapeError(RuntimeError):
    pass


class Tape:
    """Ordered log of backward closures for one forward episode."""

    def __init__(self):
        self._records: list[Callable[[], None]] = []
        self._consumed = False

    def record(self, backward_fn: Callable[[], None]) -> None:
        # A new forward op after backward starts a fresh episode.
        if self._consumed:
            self._records.clear()
            self._consumed = False
        self._records.append(backward_fn)

    def backward(self) -> None:
        if self._consumed:
            raise TapeError(
                "tape already consumed by backward; run a forward pass first"
            )
        for fn in reversed(self._records):
            fn()
        self._records.clear()
        self._consumed = True

    def reset(self) -> None:
        self._records.clear()
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)


_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _TAPE


class no_grad:
    """Context manager: ops inside record nothing on the tape."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # sum over leading axes that were prepended by broadcasting
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were 1 in the original shape
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """float64 array with an optional gradient slot.

    ``requires_grad`` marks leaves the user cares about; intermediate results
    of differentiable ops always carry gradients so the chain stays connected.
    """

    __slots__ = ("data", "requires_grad", "grad", "_is_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._is_node = self.requires_grad

    # -- plumbing ----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Seed d(self)/d(self)=1 and unwind the active tape."""
        if self.data.size != 1:
            raise TapeError("backward() needs a scalar output")
        self._accumulate(np.ones_like(self.data))
        _TAPE.backward()

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x: Arrayish) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make_output(data: np.ndarray, *parents: Tensor) -> Optional[Tensor]:
    """Create the output node; returns None in the untracked case.

    An op is recorded iff grad mode is on and some parent is part of the
    graph (a leaf with requires_grad or a previous op's output).
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p._is_node for p in parents):
        out._is_node = True
        return out
    return out


def _tracked(*parents: Tensor) -> bool:
    return _GRAD_ENABLED and any(p._is_node for p in parents)


# -- arithmetic -------------------------------------------------------------


def add(a: Arrayish, b: Arrayish) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    if _tracked(a, b):
        out._is_node = True

        def bwd(a=a, b=b, out=out):
            g = out.grad
            if g is None:
                return
            if a._is_node:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b._is_node:
                b._accumulate(_unbroadcast(g, b.data.shape))

        _TAPE.record(bwd)
    return out


def sub(a: Arrayish, b: Arrayish) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    if _tracked(a, b):
        out._is_node = True

        def bwd(a=a, b=b, out=out):
            g = out.grad
            if g is None:
                return
            if a._is_node:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b._is_node:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        _TAPE.record(bwd)
    return out


def mul(a: Arrayish, b: Arrayish) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    if _tracked(a, b):
        out._is_node = True

        def bwd(a=a, b=b, out=out):
            g = out.grad
            if g is None:
                return
            if a._is_node:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b._is_node:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        _TAPE.record(bwd)
    return out


def div(a: Arrayish, b: Arrayish) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)
    if _tracked(a, b):
        out._is_node = True

        def bwd(a=a, b=b, out=out):
            g = out.grad
            if g is None:
                return
            if a._is_node:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b._is_node:
                b._accumulate(
                    _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
                )

        _TAPE.record(bwd)
    return out


def matmul(a: Arrayish, b: Arrayish) -> Tensor:
    """Matrix product with numpy batching over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data)
    if _tracked(a, b):
        out._is_node = True

        def bwd(a=a, b=b, out=out):
            g = out.grad
            if g is None:
                return
            ad, bd = a.data, b.data
            if a._is_node:
                if bd.ndim == 1:
                    # out (...,n) = a (...,n,k) @ b (k,); outer product restores k
                    ga = np.expand_dims(g, -1) * bd
                else:
                    ga = g @ np.swapaxes(bd, -1, -2)
                    ga = _unbroadcast(ga, ad.shape)
                a._accumulate(ga)
            if b._is_node:
                if bd.ndim == 1:
                    # contract every axis of out against a's matching axes
                    gb = np.tensordot(
                        g, ad, axes=(tuple(range(g.ndim)), tuple(range(ad.ndim - 1)))
                    )
                elif ad.ndim == 1:
                    # out (...,m) = a (k,) @ b (...,k,m)
                    gb = np.expand_dims(g, -2) * np.expand_dims(ad, -1)
                    gb = _unbroadcast(gb, bd.shape)
                else:
                    gb = np.swapaxes(ad, -1, -2) @ g
                    gb = _unbroadcast(gb, bd.shape)
                b._accumulate(gb)

        _TAPE.record(bwd)
    return out


# -- shape ops --------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out):
            if out.grad is not None and a._is_node:
                a._accumulate(out.grad.reshape(a.data.shape))

        _TAPE.record(bwd)
    return out


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes))
    if _tracked(a):
        out._is_node = True
        if axes is None:
            inv = None
        else:
            inv = np.argsort(axes)

        def bwd(a=a, out=out, inv=inv):
            if out.grad is not None and a._is_node:
                a._accumulate(np.transpose(out.grad, inv))

        _TAPE.record(bwd)
    return out


def getitem(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[idx])
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out, idx=idx):
            if out.grad is not None and a._is_node:
                g = np.zeros_like(a.data)
                np.add.at(g, idx, out.grad)
                a._accumulate(g)

        _TAPE.record(bwd)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    if _GRAD_ENABLED and any(t._is_node for t in tensors):
        out._is_node = True

        def bwd(tensors=tensors, out=out, axis=axis):
            if out.grad is None:
                return
            pieces = np.split(out.grad, len(tensors), axis=axis)
            for t, p in zip(tensors, pieces):
                if t._is_node:
                    t._accumulate(np.squeeze(p, axis=axis).reshape(t.data.shape))

        _TAPE.record(bwd)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _GRAD_ENABLED and any(t._is_node for t in tensors):
        out._is_node = True
        sizes = [t.data.shape[axis] for t in tensors]
        cuts = np.cumsum(sizes)[:-1]

        def bwd(tensors=tensors, out=out, axis=axis, cuts=cuts):
            if out.grad is None:
                return
            pieces = np.split(out.grad, cuts, axis=axis)
            for t, p in zip(tensors, pieces):
                if t._is_node:
                    t._accumulate(p)

        _TAPE.record(bwd)
    return out


# -- reductions -------------------------------------------------------------


def tsum(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis))
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out, axis=axis):
            if out.grad is None or not a._is_node:
                return
            g = out.grad
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                a._accumulate(
                    np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()
                )

        _TAPE.record(bwd)
    return out


def tmean(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis))
    if _tracked(a):
        out._is_node = True
        n = a.data.size if axis is None else a.data.shape[axis]

        def bwd(a=a, out=out, axis=axis, n=n):
            if out.grad is None or not a._is_node:
                return
            g = out.grad / n
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                a._accumulate(
                    np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()
                )

        _TAPE.record(bwd)
    return out


def cumprod(a: Tensor) -> Tensor:
    """Cumulative product along a 1-d tensor.

    Backward assumes strictly nonzero entries (true for sigmoid outputs):
    dL/da_j = (sum_{i >= j} g_i * out_i) / a_j.
    """
    a = as_tensor(a)
    if a.ndim != 1:
        raise ValueError("cumprod expects a 1-d tensor")
    out = Tensor(np.cumprod(a.data))
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out):
            if out.grad is None or not a._is_node:
                return
            weighted = out.grad * out.data
            rev_cumsum = np.flip(np.cumsum(np.flip(weighted)))
            a._accumulate(rev_cumsum / a.data)

        _TAPE.record(bwd)
    return out


# -- elementwise nonlinearities ---------------------------------------------


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out):
            if out.grad is not None and a._is_node:
                a._accumulate(out.grad * out.data)

        _TAPE.record(bwd)
    return out


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out):
            if out.grad is not None and a._is_node:
                a._accumulate(out.grad / a.data)

        _TAPE.record(bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    # stable in both tails
    e = np.exp(-np.abs(a.data))
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(out_data)
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out):
            if out.grad is not None and a._is_node:
                a._accumulate(out.grad * out.data * (1.0 - out.data))

        _TAPE.record(bwd)
    return out


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out):
            if out.grad is not None and a._is_node:
                a._accumulate(out.grad * (a.data > 0.0))

        _TAPE.record(bwd)
    return out


def round_ste(a: Tensor) -> Tensor:
    """Round half-to-even forward, identity backward (straight-through)."""
    a = as_tensor(a)
    out = Tensor(np.rint(a.data))
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out):
            if out.grad is not None and a._is_node:
                a._accumulate(out.grad)

        _TAPE.record(bwd)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; boundary points pass gradient (subgradient 1)."""
    if not lo < hi:
        raise ValueError(f"clip needs lo < hi, got lo={lo}, hi={hi}")
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out, lo=lo, hi=hi):
            if out.grad is not None and a._is_node:
                mask = (a.data >= lo) & (a.data <= hi)
                a._accumulate(out.grad * mask)

        _TAPE.record(bwd)
    return out


# -- softmax / losses / norm -------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(out_data)
    if _tracked(a):
        out._is_node = True

        def bwd(a=a, out=out):
            if out.grad is None or not a._is_node:
                return
            g, s = out.grad, out.data
            dot = (g * s).sum(axis=-1, keepdims=True)
            a._accumulate(s * (g - dot))

        _TAPE.record(bwd)
    return out


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean NLL of integer labels under softmax(logits); fused backward.

    logits: (N, C); labels: int array (N,).
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)) + zmax
    n = z.shape[0]
    picked = z[np.arange(n), labels]
    out = Tensor((lse.squeeze(-1) - picked).mean())
    if _tracked(logits):
        out._is_node = True

        def bwd(logits=logits, out=out, lse=lse, labels=labels, n=n):
            if out.grad is None or not logits._is_node:
                return
            p = np.exp(logits.data - lse)
            p[np.arange(n), labels] -= 1.0
            logits._accumulate(out.grad * p / n)

        _TAPE.record(bwd)
    return out


def layernorm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance. No affine part."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat)
    if _tracked(a):
        out._is_node = True
        d = a.data.shape[-1]

        def bwd(a=a, out=out, xhat=xhat, inv=inv, d=d):
            if out.grad is None or not a._is_node:
                return
            g = out.grad
            gm = g.mean(axis=-1, keepdims=True)
            gxm = (g * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (g - gm - xhat * gxm))

        _TAPE.record(bwd)
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup; backward scatter-adds into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    out = Tensor(table.data[ids])
    if _tracked(table):
        out._is_node = True

        def bwd(table=table, out=out, ids=ids):
            if out.grad is not None and table._is_node:
                g = np.zeros_like(table.data)
                np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.data.shape[-1]))
                table._accumulate(g)

        _TAPE.record(bwd)
    return out

"""Dense-tensor arithmetic with reverse-mode differentiation.

A small define-by-run engine on top of numpy.  Every operation produces a
new :class:`Tensor` whose value is computed eagerly; when gradients are
required the operation also records its parents and a backward closure.
Calling :meth:`Tensor.backward` on a scalar result walks the recorded graph
in reverse topological order and populates ``.grad`` on every participating
tensor.  Gradients are recomputed from scratch on each call, so repeated
backward passes over the same graph are bit-identical.

All values are plain numpy arrays (float32 for training, float64 for the
verification suites).  Non-finite values abort the producing operation with
a diagnostic naming it; the only sanctioned infinity is -inf as "log zero"
out of the log-domain reductions.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "no_grad",
    "tensor",
    "concat",
    "gather_rows",
    "softmax",
    "log_softmax",
    "log_sum_exp",
    "silu",
    "relu",
    "layer_norm",
    "group_norm",
    "conv1d",
    "scaled_dot_attention",
    "finite_diff_grad",
]


class NonFiniteError(ArithmeticError):
    """A numeric operation produced NaN or an unexpected infinity."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite value produced by op '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def _check_finite(data: np.ndarray, op: str, allow_neg_inf: bool = False):
    if np.isnan(data).any():
        raise NonFiniteError(op, "NaN")
    if allow_neg_inf:
        if (data == np.inf).any():
            raise NonFiniteError(op, "+inf")
    elif np.isinf(data).any():
        raise NonFiniteError(op, "inf")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus optional autodiff bookkeeping.

    Values are treated as immutable once produced; training code mutates
    parameter ``.data`` in place only between recorded graphs (inside the
    optimizer step).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"
        # -inf is legitimate leaf data (log-domain zero); NaN/+inf never are.
        _check_finite(arr, "leaf", allow_neg_inf=True)

    # -- construction of op results ------------------------------------

    @staticmethod
    def _from_op(
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], None] | None,
        op: str,
        allow_neg_inf: bool = False,
    ) -> "Tensor":
        _check_finite(data, op, allow_neg_inf=allow_neg_inf)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        out._op = op
        return out

    # -- basic properties ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op})"

    # -- autodiff ----------------------------------------------------------

    def _graph_nodes(self) -> list["Tensor"]:
        """All nodes reachable from self, in topological order (iterative)."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        """Populate ``.grad`` for every tensor participating in this scalar.

        Grad buffers in the graph are reset first, so calling backward twice
        on the same graph yields bit-identical results.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        if not self.requires_grad and self._backward is None:
            raise ValueError("backward() on a tensor detached from any graph")
        order = self._graph_nodes()
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a.grad += _unbroadcast(g, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g, b.data.shape)

        return Tensor._from_op(a.data + b.data, (a, b), back, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self

        def back(g):
            if a.requires_grad:
                a.grad += -g

        return Tensor._from_op(-a.data, (a,), back, "neg")

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a.grad += _unbroadcast(g, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(-g, b.data.shape)

        return Tensor._from_op(a.data - b.data, (a, b), back, "sub")

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a.grad += _unbroadcast(g * b.data, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g * a.data, b.data.shape)

        return Tensor._from_op(a.data * b.data, (a, b), back, "mul")

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
        if a.data.shape[1] != b.data.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def back(g):
            if a.requires_grad:
                a.grad += g @ b.data.T
            if b.requires_grad:
                b.grad += a.data.T @ g

        return Tensor._from_op(a.data @ b.data, (a, b), back, "matmul")

    def transpose(self):
        a = self

        def back(g):
            if a.requires_grad:
                a.grad += g.T

        return Tensor._from_op(a.data.T.copy(), (a,), back, "transpose")

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def square(self):
        a = self

        def back(g):
            if a.requires_grad:
                a.grad += 2.0 * a.data * g

        return Tensor._from_op(a.data * a.data, (a,), back, "square")

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if not a.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a.grad += np.broadcast_to(gg, a.data.shape)

        return Tensor._from_op(np.asarray(out), (a,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        out = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.data.size if axis is None else a.data.shape[axis]

        def back(g):
            if not a.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a.grad += np.broadcast_to(gg, a.data.shape) / count

        return Tensor._from_op(np.asarray(out), (a,), back, "mean")

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def back(g):
            if a.requires_grad:
                a.grad += g.reshape(a.data.shape)

        return Tensor._from_op(a.data.reshape(shape).copy(), (a,), back, "reshape")

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice along `axis`."""
        a = self
        idx = [slice(None)] * a.data.ndim
        idx[axis] = slice(start, start + length)
        idx = tuple(idx)

        def back(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[idx] = g
                a.grad += buf

        return Tensor._from_op(a.data[idx].copy(), (a,), back, "narrow")


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)

    def back(g):
        offset = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                p.grad += g[tuple(idx)]
            offset += n

    return Tensor._from_op(out, parts, back, "concat")


def gather_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor by index; duplicates are allowed.

    The backward pass scatter-adds, which makes this the single primitive
    behind reflect padding, nearest-neighbour upsampling and cropping.
    """
    idx = np.asarray(indices, dtype=np.intp)

    def back(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            np.add.at(buf, idx, g)
            x.grad += buf

    return Tensor._from_op(x.data[idx].copy(), (x,), back, "gather_rows")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-stable softmax along `axis`; rows sum to 1."""
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            x.grad += y * (g - dot)

    return Tensor._from_op(y, (x,), back, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def back(g):
        if x.requires_grad:
            gsum = g.sum(axis=axis, keepdims=True)
            x.grad += g - np.exp(y) * gsum

    return Tensor._from_op(y, (x,), back, "log_softmax")


def log_sum_exp(x: Tensor, axis: int = -1) -> Tensor:
    """ln sum exp along `axis`, overflow-safe.

    -inf entries act as log-zero; a slice that is entirely -inf reduces to
    -inf rather than raising.
    """
    m = x.data.max(axis=axis, keepdims=True)
    safe_m = np.where(np.isneginf(m), 0.0, m)
    with np.errstate(divide="ignore"):
        out_k = safe_m + np.log(np.exp(x.data - safe_m).sum(axis=axis, keepdims=True))
    out = np.squeeze(out_k, axis=axis)

    def back(g):
        if x.requires_grad:
            gg = np.expand_dims(g, axis)
            with np.errstate(invalid="ignore"):
                w = np.exp(x.data - out_k)
            w = np.where(np.isneginf(out_k), 0.0, w)
            x.grad += w * gg

    return Tensor._from_op(out, (x,), back, "log_sum_exp", allow_neg_inf=True)


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), elementwise."""
    sig = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * sig

    def back(g):
        if x.requires_grad:
            x.grad += g * (sig * (1.0 + x.data * (1.0 - sig)))

    return Tensor._from_op(y, (x,), back, "silu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g):
        if x.requires_grad:
            x.grad += g * mask

    return Tensor._from_op(np.maximum(x.data, 0), (x,), back, "relu")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of a 2-D tensor over its last axis, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gain.data + bias.data
    n = x.data.shape[-1]

    def back(g):
        dxhat = g * gain.data
        if x.requires_grad:
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.grad += inv * (dxhat - m1 - xhat * m2)
        if gain.requires_grad:
            gain.grad += _unbroadcast(g * xhat, gain.data.shape)
        if bias.requires_grad:
            bias.grad += _unbroadcast(g, bias.data.shape)

    return Tensor._from_op(y, (x, gain, bias), back, "layer_norm")


def group_norm(
    x: Tensor,
    groups: int,
    gain: Tensor,
    bias: Tensor,
    eps: float = 1e-5,
    valid_rows: int | None = None,
) -> Tensor:
    """Group normalization of a (T, C) sequence.

    Statistics are taken per channel group over (time x channels-in-group).
    When `valid_rows` is given, only rows [:valid_rows] contribute to the
    statistics; trailing (padding) rows are normalized with the same
    statistics but never influence them.
    """
    T, C = x.data.shape
    if C % groups != 0:
        raise ValueError(f"channel count {C} not divisible by {groups} groups")
    v = T if valid_rows is None else int(valid_rows)
    if not 1 <= v <= T:
        raise ValueError(f"valid_rows {v} outside [1, {T}]")
    cg = C // groups
    xv = x.data[:v].reshape(v, groups, cg)
    mu = xv.mean(axis=(0, 2))
    var = xv.var(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + eps)
    mu_c = np.repeat(mu, cg)
    inv_c = np.repeat(inv, cg)
    xhat = (x.data - mu_c) * inv_c
    y = xhat * gain.data + bias.data
    n = v * cg

    def back(g):
        dxhat = g * gain.data
        if x.requires_grad:
            # mean/var were computed from the first v rows only, so the
            # correction terms sum over all rows but flow back to those v.
            s1 = dxhat.reshape(T, groups, cg).sum(axis=(0, 2))
            s2 = (dxhat * xhat).reshape(T, groups, cg).sum(axis=(0, 2))
            gx = dxhat * inv_c
            gx[:v] -= (np.repeat(s1, cg) + xhat[:v] * np.repeat(s2, cg)) * inv_c / n
            x.grad += gx
        if gain.requires_grad:
            gain.grad += (g * xhat).sum(axis=0)
        if bias.requires_grad:
            bias.grad += g.sum(axis=0)

    return Tensor._from_op(y, (x, gain, bias), back, "group_norm")


def conv1d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """1-D convolution over time: x (L, Cin), kernel (k, Cin, Cout).

    Output length is floor((L + 2*padding - k) / stride) + 1; padding is
    zero-fill on both ends of the time axis.
    """
    L, Cin = x.data.shape
    k, kc, Cout = kernel.data.shape
    if kc != Cin:
        raise ValueError(f"kernel channels {kc} != input channels {Cin}")
    Lp = L + 2 * padding
    if k > Lp:
        raise ValueError(f"kernel width {k} exceeds padded length {Lp}")
    Lout = (Lp - k) // stride + 1
    xp = np.zeros((Lp, Cin), dtype=x.data.dtype)
    xp[padding : padding + L] = x.data
    s0, s1 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(Lout, k, Cin), strides=(s0 * stride, s0, s1)
    )
    out = np.tensordot(windows, kernel.data, axes=([1, 2], [0, 1]))
    if bias is not None:
        out = out + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def back(g):
        if kernel.requires_grad:
            kernel.grad += np.tensordot(windows, g, axes=([0], [0]))
        if bias is not None and bias.requires_grad:
            bias.grad += g.sum(axis=0)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[i : i + stride * Lout : stride] += g @ kernel.data[i].T
            x.grad += gxp[padding : padding + L]

    return Tensor._from_op(np.ascontiguousarray(out), parents, back, "conv1d")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v for 2-D (time, dim) inputs."""
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key count {k.shape[0]} != value count {v.shape[0]}")
    scale = 1.0 / math.sqrt(q.shape[1])
    scores = (q @ k.transpose()) * scale
    return softmax(scores, axis=-1) @ v


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h.

    Independent of the autodiff path; used to verify backward passes.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad

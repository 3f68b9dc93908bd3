"""Dense arrays with reverse-mode automatic differentiation.

Values live in numpy arrays (row-major, float32 by default, float64 in
gradient-check mode). Every operation that participates in training records
its parents and a backward closure; ``Tensor.backward`` walks the graph in
reverse topological order and accumulates gradients additively, so a value
used twice receives the sum of both contributions.

Broadcasting is deliberately restricted: elementwise ops require equal
shapes, except that the second operand of ``add``/``mul`` may match a
trailing suffix of the first operand's shape (bias-style broadcast).
Any other mismatch raises :class:`ShapeError`. Non-finite op outputs raise
:class:`NumericError` instead of propagating.
"""

from __future__ import annotations

import contextlib
import functools
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, NumericError, ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"supported dtypes are float32/float64, got {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the default dtype (float64 for gradient checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forwards inside run on plain arrays."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(data: np.ndarray, op: str) -> None:
    # sum() is NaN/Inf whenever any element is, without allocating a bool mask
    if not np.isfinite(data.sum()):
        raise NumericError(f"non-finite values in output of {op}")


class Tensor:
    """A node in the computation graph: values plus optional grad machinery."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise ContractError("wrap raw arrays, not Tensors")
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._op = "leaf"

    # -- introspection ------------------------------------------------------

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
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self._op})"

    # -- autograd -----------------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # always copy on adoption: g may alias another node's grad buffer
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode pass from a scalar output; visits each node once."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.shape}")
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._backward = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    else:
        out.requires_grad = False
        out._parents = ()
    return out


def _trailing_broadcast_ok(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> bool:
    return len(b_shape) < len(a_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape


def _reduce_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast to reach g's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if gs != ss)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and not (
        _trailing_broadcast_ok(a.shape, b.shape) or _trailing_broadcast_ok(b.shape, a.shape)
    ):
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not equal or trailing-broadcastable")
    out = _result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(g, b.shape))
        out._backward = _backward
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; scalar operands (python number or size-1 tensor) allowed."""
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        out = _result(a.data * b, (a,), "mul")
        if out.requires_grad:
            def _backward():
                a._accumulate(out.grad * b)
            out._backward = _backward
        return out
    b = as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1 and not (
        _trailing_broadcast_ok(a.shape, b.shape) or _trailing_broadcast_ok(b.shape, a.shape)
    ):
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} are not equal, scalar, or trailing-broadcastable")
    out = _result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(g * a.data, b.shape))
        out._backward = _backward
    return out


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        data = np.exp(x.data)
    out = _result(data, (x,), "exp")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad * out.data)
        out._backward = _backward
    return out


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive value")
    out = _result(np.log(x.data), (x,), "log")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad / x.data)
        out._backward = _backward
    return out


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = _result(np.tanh(x.data), (x,), "tanh")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad * (1.0 - out.data * out.data))
        out._backward = _backward
    return out


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    x = as_tensor(x)
    v = x.data
    x2 = v * v
    inner = x2 * (_GELU_C * 0.044715)
    inner += _GELU_C
    inner *= v  # C * (x + 0.044715 x^3)
    t = np.tanh(inner)
    half_t1 = t + 1.0
    half_t1 *= 0.5
    out = _result(v * half_t1, (x,), "gelu")
    if out.requires_grad:
        def _backward():
            sech2 = 1.0 - t * t
            d_inner = x2 * (3.0 * 0.044715 * _GELU_C)
            d_inner += _GELU_C
            dydx = sech2 * d_inner
            dydx *= 0.5 * v
            dydx += half_t1
            x._accumulate(out.grad * dydx)
        out._backward = _backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = _result(s.astype(x.data.dtype), (x,), "sigmoid")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad * out.data * (1.0 - out.data))
        out._backward = _backward
    return out


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from e
    out = _result(data, (x,), "reshape")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad.reshape(x.shape))
        out._backward = _backward
    return out


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for ndim {x.ndim}")
    out = _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), "transpose")
    if out.requires_grad:
        inverse = tuple(np.argsort(axes))
        def _backward():
            x._accumulate(out.grad.transpose(inverse))
        out._backward = _backward
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of zero tensors")
    out = _result(np.concatenate([p.data for p in parts], axis=axis), parts, "concat")
    if out.requires_grad:
        sizes = [p.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)
        def _backward():
            g = out.grad
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    index = [slice(None)] * g.ndim
                    index[axis] = slice(int(lo), int(hi))
                    p._accumulate(g[tuple(index)])
        out._backward = _backward
    return out


def slice_(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing; backward scatters into a zero gradient."""
    x = as_tensor(x)
    data = x.data[key]
    out = _result(np.ascontiguousarray(data), (x,), "slice")
    if out.requires_grad:
        def _backward():
            g = np.zeros_like(x.data)
            g[key] = out.grad
            x._accumulate(g)
        out._backward = _backward
    return out


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError as e:
        raise ShapeError(f"broadcast_to: {x.shape} -> {shape}") from e
    out = _result(data, (x,), "broadcast")
    if out.requires_grad:
        def _backward():
            x._accumulate(_reduce_to_shape(out.grad, x.shape))
        out._backward = _backward
    return out


def gather_flat(x: Tensor, indices: np.ndarray, out_shape: tuple[int, ...]) -> Tensor:
    """Pick elements of the flattened input; used for strided patch extraction.

    ``indices`` is an int array of flat positions, reshaped to ``out_shape``.
    Backward scatter-adds (duplicate indices accumulate).
    """
    x = as_tensor(x)
    flat = x.data.reshape(-1)
    out = _result(flat[indices.reshape(-1)].reshape(out_shape), (x,), "gather")
    if out.requires_grad:
        def _backward():
            g = np.bincount(indices.reshape(-1), weights=out.grad.reshape(-1).astype(np.float64),
                            minlength=flat.size)
            x._accumulate(g.reshape(x.shape).astype(x.data.dtype))
        out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), "sum")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape).copy())
        out._backward = _backward
    return out


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else (
        np.prod([x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    )
    out = _result(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), "mean")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate((np.broadcast_to(g, x.shape) / n).astype(x.data.dtype))
        out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with stacked leading dims on either operand.

    2-D x 2-D is a plain GEMM; (N..., m, k) x (k, n) folds the leading dims
    into one GEMM. Backward: grad_a = g . b^T, grad_b = a^T . g (summed over
    broadcast batch dims).
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul requires at least 1-D operands")
    k_a = a.shape[-1]
    k_b = b.shape[-2] if b.ndim > 1 else b.shape[0]
    if k_a != k_b:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    if a.ndim > 2 and b.ndim == 2:
        folded = a.data.reshape(-1, k_a) @ b.data
        data = folded.reshape(*a.shape[:-1], b.shape[-1])
    else:
        try:
            data = a.data @ b.data
        except ValueError as e:
            raise ShapeError(f"matmul: {a.shape} x {b.shape}") from e
    out = _result(data, (a, b), "matmul")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                if b.ndim == 2:
                    ga = g.reshape(-1, b.shape[-1]) @ b.data.T
                    a._accumulate(ga.reshape(a.shape))
                else:
                    ga = g @ b.data.swapaxes(-1, -2)
                    a._accumulate(_reduce_to_shape(ga, a.shape))
            if b.requires_grad:
                if b.ndim == 2 and a.ndim >= 2:
                    gb = a.data.reshape(-1, k_a).T @ g.reshape(-1, g.shape[-1])
                    b._accumulate(gb)
                else:
                    gb = a.data.swapaxes(-1, -2) @ g
                    b._accumulate(_reduce_to_shape(gb, b.shape))
        out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# fused neural-net ops
# ---------------------------------------------------------------------------


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last dim, stabilized by max subtraction."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim: empty last dim in shape {x.shape}")
    y = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)
    out = _result(y, (x,), "softmax")
    if out.requires_grad:
        def _backward():
            g = out.grad
            inner = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate(y * (g - inner))
        out._backward = _backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dim to mean 0 / var 1, then apply gamma*x + beta.

    eps sits inside the square root, so a zero-variance row normalizes to
    zeros rather than dividing by zero.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm: zero-length row")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} must match last extent ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _result(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
            if beta.requires_grad:
                beta._accumulate(g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                gx = g * gamma.data
                term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(term * inv)
        out._backward = _backward
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log softmax-probability of the target classes.

    logits: (n, C); targets: int sequence of length n in [0, C).
    Gradient w.r.t. logits is (softmax - onehot) / n.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    n, c = logits.shape
    if n == 0 or c == 0:
        raise ShapeError(f"cross_entropy: empty logits {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != n:
        raise ShapeError(f"cross_entropy: {n} rows vs {t.shape[0]} targets")
    if t.min(initial=0) < 0 or t.max(initial=-1) >= c:
        raise IndexError(f"cross_entropy: target out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    loss = -logp[np.arange(n), t].mean()
    out = _result(np.asarray(loss, dtype=logits.data.dtype), (logits,), "cross_entropy")
    if out.requires_grad:
        def _backward():
            p = np.exp(logp)
            p[np.arange(n), t] -= 1.0
            logits._accumulate(out.grad * p / n)
        out._backward = _backward
    return out


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross entropy on raw logits (numerically stable)."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=logits.data.dtype).reshape(logits.shape)
    z = logits.data
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    out = _result(np.asarray(loss, dtype=z.dtype), (logits,), "bce")
    if out.requires_grad:
        def _backward():
            s = 1.0 / (1.0 + np.exp(-z))
            logits._accumulate(out.grad * (s - y) / z.size)
        out._backward = _backward
    return out


def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale rows (last dim) to unit L2 norm; eps guards the zero vector."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True) + eps)
    y = x.data / norm
    out = _result(y, (x,), "l2norm")
    if out.requires_grad:
        def _backward():
            g = out.grad
            inner = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate((g - y * inner) / norm)
        out._backward = _backward
    return out

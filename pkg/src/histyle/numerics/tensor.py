"""Reverse-mode autodiff over dense numpy arrays.

Small tape-based engine: each op returns a new Tensor holding the numpy
result plus a backward closure.  Tensors are immutable values after
construction (parameter updates go through ParamStore.assign).  Every public
op checks its output for non-finite values unless HISTYLE_CHECK_FINITE=0.
"""

import os
from contextlib import contextmanager

import numpy as np

_CHECK_FINITE = os.getenv("HISTYLE_CHECK_FINITE", "1") == "1"
_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction (inference / sampling loops)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(data):
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def _check_finite(arr, op):
    if _CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")


def _coerce(other, like_dtype):
    """Wrap a non-Tensor operand; python scalars adopt the peer's dtype."""
    if isinstance(other, Tensor):
        return other
    arr = np.asarray(other)
    if arr.ndim == 0 and np.issubdtype(like_dtype, np.floating):
        return Tensor(arr.astype(like_dtype))
    return Tensor(arr)


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the original shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bwd = None

    @classmethod
    def _from_op(cls, data, parents, bwd, op):
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._bwd = bwd
        else:
            out.requires_grad = False
            out._parents = ()
            out._bwd = None
        return out

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, grad):
        # first contribution binds a private copy; later ones accumulate
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad.astype(self.data.dtype, copy=False)

    # -- autodiff driver ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar output, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = _coerce(other, self.data.dtype)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        return Tensor._from_op(out_data, (self, other), bwd, "add")

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            if self.requires_grad:
                self._accum(-g)

        return Tensor._from_op(-self.data, (self,), bwd, "neg")

    def __sub__(self, other):
        other = _coerce(other, self.data.dtype)
        out_data = self.data - other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g, other.data.shape))

        return Tensor._from_op(out_data, (self, other), bwd, "sub")

    def __rsub__(self, other):
        return _coerce(other, self.data.dtype) - self

    def __mul__(self, other):
        other = _coerce(other, self.data.dtype)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._from_op(out_data, (self, other), bwd, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other, self.data.dtype)
        out_data = self.data / other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(
                    _unbroadcast(-g * self.data / (other.data * other.data),
                                 other.data.shape)
                )

        return Tensor._from_op(out_data, (self, other), bwd, "div")

    def __rtruediv__(self, other):
        return _coerce(other, self.data.dtype) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported")
        e = float(exponent)
        out_data = self.data ** e

        def bwd(g):
            if self.requires_grad:
                self._accum(g * e * self.data ** (e - 1.0))

        return Tensor._from_op(out_data, (self,), bwd, "pow")

    # -- matmul ---------------------------------------------------------------

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if not self.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, self.data.shape))

        return Tensor._from_op(np.asarray(out_data), (self,), bwd, "sum")

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape ops --------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        old_shape = self.data.shape

        def bwd(g):
            if self.requires_grad:
                self._accum(g.reshape(old_shape))

        return Tensor._from_op(out_data, (self,), bwd, "reshape")

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out_data = np.transpose(self.data, axes)

        def bwd(g):
            if self.requires_grad:
                self._accum(np.transpose(g, inv))

        return Tensor._from_op(out_data, (self,), bwd, "transpose")

    def __getitem__(self, idx):
        if isinstance(idx, Tensor):
            raise TypeError("tensor indices are not supported")
        out_data = self.data[idx]
        if np.isscalar(out_data) or out_data.ndim == 0:
            out_data = np.asarray(out_data)

        def bwd(g):
            if self.requires_grad:
                buf = np.zeros_like(self.data, dtype=np.float64)
                buf[idx] += g
                self._accum(buf)

        return Tensor._from_op(out_data, (self,), bwd, "getitem")


# ---------------------------------------------------------------------------
# free functions


def matmul(a, b):
    """Matrix product with gradients.

    Supports 2D @ 2D, ND @ 2D (weights on the right), and ND @ ND with equal
    leading batch dimensions.
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(
            f"matmul requires >=2D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner-dimension mismatch: {a.data.shape} @ {b.data.shape}"
        )
    if b.ndim == 2:
        out_data = a.data @ b.data

        def bwd(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                k = a.data.shape[-1]
                m = g.shape[-1]
                b._accum(a.data.reshape(-1, k).T @ g.reshape(-1, m))

        return Tensor._from_op(out_data, (a, b), bwd, "matmul")
    if a.ndim == b.ndim and a.data.shape[:-2] == b.data.shape[:-2]:
        out_data = a.data @ b.data

        def bwd(g):
            if a.requires_grad:
                a._accum(g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                b._accum(np.swapaxes(a.data, -1, -2) @ g)

        return Tensor._from_op(out_data, (a, b), bwd, "matmul")
    raise ValueError(
        f"unsupported matmul broadcasting: {a.data.shape} @ {b.data.shape}"
    )


def exp(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    out_data = np.exp(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * out_data)

    return Tensor._from_op(out_data, (x,), bwd, "exp")


def log(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    out_data = np.log(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g / x.data)

    return Tensor._from_op(out_data, (x,), bwd, "log")


def tanh(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    out_data = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * (1.0 - out_data * out_data))

    return Tensor._from_op(out_data, (x,), bwd, "tanh")


def relu(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * (x.data > 0.0))

    return Tensor._from_op(out_data, (x,), bwd, "relu")


def sqrt(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    return x ** 0.5


def concat(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                t._accum(g[tuple(sl)])

    return Tensor._from_op(out_data, tuple(tensors), bwd, "concat")


def softmax(x, axis=-1):
    """Row-stochastic softmax along `axis` (shift-invariant, stable)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = exp(x - shift)
    return e / e.sum(axis=axis, keepdims=True)


def mean(x, axis=None, keepdims=False):
    x = x if isinstance(x, Tensor) else Tensor(x)
    return x.mean(axis=axis, keepdims=keepdims)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine.

    eps inside the square root keeps zero-variance rows finite (they map to
    zero before the affine part).  Fused op with an analytic backward.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    gain = gain if isinstance(gain, Tensor) else Tensor(gain)
    bias = bias if isinstance(bias, Tensor) else Tensor(bias)
    if x.data.shape[-1] != gain.data.shape[-1] or x.data.shape[-1] != bias.data.shape[-1]:
        raise ValueError(
            f"layer_norm shape mismatch: x {x.data.shape}, gain {gain.data.shape}, "
            f"bias {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out_data = y * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            gain._accum((g * y).sum(axis=tuple(range(g.ndim - 1))))
        if bias.requires_grad:
            bias._accum(g.sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            w = g * gain.data
            mean_w = np.mean(w, axis=-1, keepdims=True)
            mean_wy = np.mean(w * y, axis=-1, keepdims=True)
            x._accum((w - mean_w - y * mean_wy) * inv)

    return Tensor._from_op(out_data, (x, gain, bias), bwd, "layer_norm")


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(x):
    """Gaussian error linear unit, tanh approximation. Fused op."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    xd = x.data
    th = np.tanh(_GELU_C * (xd + _GELU_A * xd * xd * xd))
    out_data = 0.5 * xd * (1.0 + th)

    def bwd(g):
        if x.requires_grad:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
            x._accum(g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * du))

    return Tensor._from_op(out_data, (x,), bwd, "gelu")

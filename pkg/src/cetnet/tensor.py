"""Dense float64 tensors with reverse-mode differentiation.

Every operation returns a new :class:`Tensor`. When any input requires a
gradient, the result keeps references to its parents together with a
backward rule mapping the output gradient to one gradient per parent. Calling
:meth:`Tensor.backward` on a scalar walks that graph in reverse topological
order; gradients of intermediate nodes live only for the duration of the
call, while leaf tensors (parameters) accumulate into ``.grad``.

The op set is deliberately small: what the segmentation model and its losses
need, nothing more.
"""
import contextlib
import math

import numpy as np

from .errors import ContractError, EmptyInputError, ParameterError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise EmptyInputError(f"tensor with empty dimension {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'!r})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: scale(self, -1.0)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, idx: take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root):
    # iterative DFS; the full model graph is far deeper than the recursion limit
    order, seen = [], {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        for parent in it:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _result(data, parents, backward, op):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)), "div")


def scale(x, c):
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


def exp(x):
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x):
    out = np.sqrt(x.data)
    return _result(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def square(x):
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def absolute(x):
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x):
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def clamp_max(x, hi):
    """min(x, hi); the gradient is zero where the clamp is active."""
    mask = x.data < hi
    return _result(np.where(mask, x.data, hi), (x,), lambda g: (g * mask,), "clamp_max")


def softplus(x):
    # log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    out = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(out, (x,), lambda g: (g * sig,), "softplus")


def stop_gradient(x):
    return Tensor(x.data, op="stop_gradient")


# ---------------------------------------------------------------- reductions

def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else x.shape[axis]
    return scale(tsum(x, axis, keepdims), 1.0 / n)


def logsumexp(x, axis=-1):
    """Stable log-sum-exp along ``axis`` (axis dropped)."""
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    w = e / s
    return _result(out, (x,), lambda g: (np.expand_dims(g, axis) * w,), "logsumexp")


# ---------------------------------------------------------------- shape ops

def transpose(x):
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def take(x, idx):
    """Numpy-style indexing (slices, integer arrays, tuples of those)."""
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(np.array(out, dtype=np.float64), (x,), backward, "take")


def concat_channels(*xs):
    """Concatenate T x C_i matrices along the channel (column) axis."""
    if len(xs) == 1 and isinstance(xs[0], (list, tuple)):
        xs = tuple(xs[0])
    xs = tuple(as_tensor(x) for x in xs)
    for x in xs:
        if x.ndim != 2:
            raise ShapeError(f"concat_channels expects matrices, got shape {x.shape}")
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeError(f"concat_channels: row counts differ {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])
    out = np.concatenate([x.data for x in xs], axis=1)
    return _result(out, xs,
                   lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))),
                   "concat")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _result(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def dilated_conv1d(x, w, b, dilation):
    """Same-length temporal convolution with kernel 3 and zero padding.

    ``x`` is T x C_in, ``w`` is 3 x C_in x C_out, ``b`` has C_out entries.
    Output row t is ``b + sum_j x[t + (j - 1) * dilation] @ w[j]`` with
    out-of-range rows read as zero.
    """
    if int(dilation) != dilation or dilation < 1:
        raise ParameterError(f"dilation must be a positive integer, got {dilation}")
    dilation = int(dilation)
    if w.ndim != 3 or w.shape[0] != 3:
        raise ParameterError(f"unsupported kernel shape {w.shape}: only kernel size 3 is supported")
    if x.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[2],):
        raise ShapeError(f"dilated_conv1d: input {x.shape}, kernel {w.shape}, bias {b.shape}")
    T, d = x.shape[0], dilation
    xp = np.zeros((T + 2 * d, x.shape[1]))
    xp[d:d + T] = x.data
    taps = [xp[j * d:j * d + T] for j in range(3)]
    out = b.data + sum(tap @ w.data[j] for j, tap in enumerate(taps))

    def backward(g):
        gxp = np.zeros_like(xp)
        for j in range(3):
            gxp[j * d:j * d + T] += g @ w.data[j].T
        gw = np.stack([tap.T @ g for tap in taps])
        return gxp[d:d + T], gw, g.sum(axis=0)

    return _result(out, (x, w, b), backward, "dilated_conv1d")


# ---------------------------------------------------------------- row-wise nonlinearities

def softmax_rows(x):
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {x.shape}")
    e = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    return _result(s, (x,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),), "softmax")


def log_softmax_rows(x):
    if x.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects a matrix, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),), "log_softmax")


def _normalize(x, weight, bias, axis, eps, opname):
    if x.ndim != 2:
        raise ShapeError(f"{opname} expects a T x C matrix, got shape {x.shape}")
    n = x.shape[axis]
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv
    if weight is None:
        out = xhat
        parents = (x,)
    else:
        out = xhat * weight.data + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gh = g if weight is None else g * weight.data
        gx = inv / n * (n * gh - gh.sum(axis=axis, keepdims=True)
                        - xhat * (gh * xhat).sum(axis=axis, keepdims=True))
        if weight is None:
            return (gx,)
        return (gx, _unbroadcast(g * xhat, weight.shape), _unbroadcast(g, bias.shape))

    return _result(out, parents, backward, opname)


def instance_norm(x, weight=None, bias=None, eps=1e-5):
    """Normalize each channel of a T x C matrix over time, then apply affine."""
    if x.ndim == 2 and x.shape[0] == 0:
        raise EmptyInputError("instance_norm on a zero-length sequence")
    return _normalize(x, weight, bias, 0, eps, "instance_norm")


def layer_norm(x, weight=None, bias=None, eps=1e-5):
    """Normalize each frame of a T x C matrix over channels, then apply affine."""
    return _normalize(x, weight, bias, 1, eps, "layer_norm")


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add(y, b)


def cosine_rows(x, w, eps=1e-8):
    """Cosine similarity between every row of ``x`` (T x E) and every column of ``w`` (E x c)."""
    xn = sqrt(add(tsum(square(x), axis=1, keepdims=True), eps * eps))
    wn = sqrt(add(tsum(square(w), axis=0, keepdims=True), eps * eps))
    return div(matmul(x, w), mul(xn, wn))


def numerical_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-8):
    """Elementwise |a - b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def is_finite(x):
    return bool(np.all(np.isfinite(x.data))) if isinstance(x, Tensor) else math.isfinite(x)

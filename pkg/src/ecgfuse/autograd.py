"""A small dense-tensor engine with reverse-mode differentiation.

Only a closed set of primitives is differentiable (see ``PRIMITIVES``); every
layer and loss in the package is composed from them. Values live in numpy
arrays; the graph is recorded as parent links plus a closure that maps the
output gradient to one gradient per parent.
"""
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import rng as _rng
from .errors import AxisError, ContractError, DeterminismError, ShapeError

PRIMITIVES = (
    "matmul", "add", "mul", "permute", "reshape", "concat", "slice", "mean",
    "softmax", "layer_norm", "gelu", "sigmoid", "dropout", "mse", "bce",
)

_state = {"dtype": np.dtype(np.float32), "grad_enabled": True}


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype):
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported precision {dtype}; use float32 or float64")
    _state["dtype"] = dtype


@contextmanager
def precision(bits):
    """Temporarily switch the default dtype to 32- or 64-bit floats."""
    prev = _state["dtype"]
    set_default_dtype({32: np.float32, 64: np.float64}[int(bits)])
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


class Tensor:
    """Dense array with optional gradient tracking.

    Leaves created with ``requires_grad=True`` carry a zero-initialised
    ``grad`` buffer that ``backward`` accumulates into.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            dtype = _state["dtype"]
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._grad_fn = None
        self.op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._grad_fn is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_as_tensor(other, self), self)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _result(data, parents, grad_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    track = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._grad_fn = grad_fn if track else None
    return out


def _norm_axis(axis, ndim, op):
    if not -ndim <= axis < ndim:
        raise AxisError(f"{op}: axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape, detail="not broadcastable") from None


# --- primitives -------------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch axes") from None
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), grad_fn, "matmul")


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), grad_fn, "mul")


def permute(x, axes):
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise AxisError(f"permute: {axes} is not a permutation of the {x.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,),
                   lambda g: (np.transpose(g, inverse),), "permute")


def transpose(x, ax1=-2, ax2=-1):
    axes = list(range(x.ndim))
    ax1, ax2 = _norm_axis(ax1, x.ndim, "transpose"), _norm_axis(ax2, x.ndim, "transpose")
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return permute(x, axes)


def reshape(x, shape):
    try:
        data = np.reshape(x.data, shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    src = x.shape
    return _result(data, (x,), lambda g: (g.reshape(src),), "reshape")


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = _norm_axis(axis, ndim, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != ref[i] for i in range(ndim) if i != axis):
            raise ShapeError("concat", ref, t.shape, detail=f"axis {axis}")
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(data, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def take_slice(x, start, stop, axis=0):
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    axis = _norm_axis(axis, x.ndim, "slice")
    n = x.shape[axis]
    if not 0 <= start <= stop <= n:
        raise ShapeError("slice", x.shape, detail=f"[{start}:{stop}] on axis {axis}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    src_shape, dtype = x.shape, x.dtype

    def grad_fn(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _result(x.data[index], (x,), grad_fn, "slice")


def split(x, sizes, axis=0):
    """Inverse of ``concat``: cut ``x`` into consecutive pieces of ``sizes``."""
    axis = _norm_axis(axis, x.ndim, "split")
    if sum(sizes) != x.shape[axis]:
        raise ShapeError("split", x.shape, detail=f"sizes {list(sizes)} along axis {axis}")
    out, start = [], 0
    for s in sizes:
        out.append(take_slice(x, start, start + s, axis))
        start += s
    return out


def mean(x, axis=None, keepdims=False):
    if axis is None:
        axes = tuple(range(x.ndim))
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(_norm_axis(a, x.ndim, "mean") for a in axes)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    src_shape = x.shape

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, src_shape).copy(),)

    data = np.mean(x.data, axis=axes, keepdims=keepdims)
    return _result(np.asarray(data, dtype=x.dtype), (x,), grad_fn, "mean")


def softmax(x, axis=-1):
    axis = _norm_axis(axis, x.ndim, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), grad_fn, "softmax")


def layer_norm(x, eps=1e-5):
    """Normalise over the last axis to zero mean and unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def grad_fn(g):
        gs = g.sum(axis=-1, keepdims=True)
        gx = (g * xhat).sum(axis=-1, keepdims=True)
        return (inv / n * (n * g - gs - xhat * gx),)

    return _result(xhat.astype(x.dtype, copy=False), (x,), grad_fn, "layer_norm")


_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT_HALF))

    def grad_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _result((xd * cdf).astype(x.dtype, copy=False), (x,), grad_fn, "gelu")


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    s = _sigmoid_np(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def dropout(x, p, training, key=(0, 0, 0)):
    """Inverted dropout; ``key`` is ``(seed, layer_id, step)``.

    Identity (the same tensor) when not training or when ``p == 0``.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    seed, layer_id, step = key
    gen = _rng.stream(seed, _rng.derive_seed(0xD0, layer_id), step)
    keep = (gen.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def mse(a, b):
    """Mean squared error over all elements; scalar result."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ShapeError("mse", a.shape, b.shape)
    diff = a.data - b.data
    n = diff.size

    def grad_fn(g):
        ga = 2.0 * g * diff / n
        return ga, -ga

    return _result(np.asarray(np.mean(diff * diff), dtype=a.dtype), (a, b), grad_fn, "mse")


def bce(logits, targets):
    """Binary cross-entropy on logits, averaged over all elements."""
    z = _as_tensor(logits)
    y = _as_tensor(targets, z)
    if z.shape != y.shape:
        raise ShapeError("bce", z.shape, y.shape)
    zd, yd = z.data, y.data
    n = zd.size
    loss = np.maximum(zd, 0) - zd * yd + np.log1p(np.exp(-np.abs(zd)))

    def grad_fn(g):
        gz = g * (_sigmoid_np(zd) - yd) / n if z.requires_grad else None
        gy = -g * zd / n if y.requires_grad else None
        return gz, gy

    return _result(np.asarray(loss.mean(), dtype=z.dtype), (z, y), grad_fn, "bce")


def op_forward(kind, inputs, **kwargs):
    """Dispatch a primitive by name, e.g. ``op_forward("softmax", [x], axis=0)``."""
    table = {
        "matmul": matmul, "add": add, "mul": mul, "permute": permute,
        "transpose": permute, "reshape": reshape, "slice": take_slice,
        "mean": mean, "softmax": softmax, "layer_norm": layer_norm, "gelu": gelu,
        "sigmoid": sigmoid, "dropout": dropout, "mse": mse, "bce": bce,
    }
    if kind == "concat":
        return concat(inputs, **kwargs)
    if kind not in table:
        raise ContractError(f"unknown primitive {kind!r}")
    return table[kind](*inputs, **kwargs)


# --- composites -------------------------------------------------------------

def sum_all(x):
    return mul(mean(x), float(x.size))


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# --- reverse pass -----------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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


def backward(result):
    """Accumulate d(result)/d(leaf) into every reachable leaf's ``grad``."""
    if not isinstance(result, Tensor) or result.data.size != 1:
        shape = getattr(result, "shape", None)
        raise ContractError(f"backward needs a scalar result, got shape {shape}")
    if not result.requires_grad:
        return
    grads = {id(result): np.ones_like(result.data)}
    for node in reversed(_topo_order(result)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# --- finite-difference check ------------------------------------------------

@dataclass
class GradCheckReport:
    max_relative_error: float
    max_abs_error: float
    passed: bool
    worst_index: tuple

    @property
    def pass_(self):
        return self.passed


def grad_check(function, input, epsilon=1e-6, tolerance=1e-4):
    """Compare reverse-mode gradients with central differences elementwise.

    ``function`` maps a Tensor to a scalar Tensor. Relative error per element
    is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    base = input.data if isinstance(input, Tensor) else np.asarray(input)
    if base.dtype != np.float64:
        raise ContractError("grad_check requires 64-bit input")
    if not 1e-7 <= epsilon <= 1e-3:
        raise ContractError(f"epsilon {epsilon} outside [1e-7, 1e-3]")

    x = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    out = function(x)
    backward(out)
    analytic = x.grad

    def f(values):
        return float(function(Tensor(values, dtype=np.float64)).data)

    first, second = f(base.copy()), f(base.copy())
    if first != second or first != float(out.data):
        raise DeterminismError(f"closure is not deterministic: {first!r} vs {second!r}")

    numeric = np.empty_like(base)
    work = base.copy()
    for idx in np.ndindex(base.shape):
        orig = work[idx]
        work[idx] = orig + epsilon
        fp = f(work)
        work[idx] = orig - epsilon
        fm = f(work)
        work[idx] = orig
        numeric[idx] = (fp - fm) / (2.0 * epsilon)

    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = abs_err / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_rel, float(abs_err.max()) if rel.size else 0.0,
                           max_rel <= tolerance, tuple(int(i) for i in worst))

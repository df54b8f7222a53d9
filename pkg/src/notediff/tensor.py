"""A small reverse-mode autodiff engine on top of numpy.

Every differentiable op appends its output to a thread-local tape (the
computation record). :func:`backward` walks the tape once in reverse, which is
a valid reverse topological order because ops are recorded as they run, and
then clears it.
"""
from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

_state = threading.local()


def _tape() -> list:
    if not hasattr(_state, "tape"):
        _state.tape = []
        _state.enabled = True
        _state.dtype = np.float32
    return _state.tape


def grad_enabled() -> bool:
    _tape()
    return _state.enabled


def default_dtype():
    _tape()
    return _state.dtype


@contextlib.contextmanager
def no_grad():
    _tape()
    prev, _state.enabled = _state.enabled, False
    try:
        yield
    finally:
        _state.enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Use ``dtype`` (e.g. ``np.float64`` for gradient checks) for new tensors."""
    _tape()
    prev, _state.dtype = _state.dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def clear_record() -> None:
    _tape().clear()


def record_size() -> int:
    return len(_tape())


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_pool(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    # gradients are never updated in place, so storing g without a copy is safe
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        _tape().append(out)
    return out


def _shape_error(op, a, b):
    return ValueError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


# --- elementwise --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def backward(g):
        _accum(a, g)
        _accum(b, g)
    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)
    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)
    return _result(a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * c)
    return _result(a.data * a.data.dtype.type(c), (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        _accum(a, g * out)
    return _result(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise ValueError("log: non-finite input")

    def backward(g):
        _accum(a, g / a.data)
    return _result(np.log(a.data), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    dt = x.dtype.type
    x2 = x * x
    th = np.tanh(x * (dt(_GELU_C) + dt(_GELU_C * 0.044715) * x2))
    out = dt(0.5) * x * (dt(1.0) + th)

    def backward(g):
        # in-place chain keeps temporaries down on the large FFN activations
        d = th * th
        np.subtract(dt(1.0), d, out=d)
        d *= x
        d *= dt(_GELU_C) + dt(3 * _GELU_C * 0.044715) * x2
        d += dt(1.0) + th
        d *= dt(0.5)
        d *= g
        _accum(a, d)
    return _result(out, (a,), backward)


# --- shape --------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", a.shape, shape) from None

    def backward(g):
        _accum(a, g.reshape(a.shape))
    return _result(out, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inv))
    return _result(a.data.transpose(axes), (a,), backward)


def getitem(a, index) -> Tensor:
    """Basic slicing (and integer-array indexing along one axis)."""
    a = as_tensor(a)
    out = a.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        _accum(a, full)
    return _result(np.array(out, copy=True), (a,), backward)


slice_ = getitem


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax):
            raise _shape_error("concat", tensors[0].shape, t.shape)
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=ax)):
            _accum(t, part)
    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                   for t in tensors], axis=axis)


# --- reductions ---------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))
    return _result(np.asarray(out), (a,), backward)


def mean_pool(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum_(a, axis, keepdims), 1.0 / n)


# --- linear algebra -----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise _shape_error("matmul", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, ga)
        if b.requires_grad:
            a2 = a.data if a.ndim > 1 else a.data[None, :]
            g2 = g if a.ndim > 1 else g[..., None, :]
            gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
            _accum(b, gb)
    return _result(out, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with the leading dims folded into one matmul."""
    x = as_tensor(x)
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, bias)
    return reshape(out, lead + (weight.shape[-1],)) if x.ndim != 2 else out


# --- embedding ----------------------------------------------------------

def embedding_lookup(weight: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise IndexError(f"embedding_lookup: index out of range for table of {weight.shape[0]} rows")

    def backward(g):
        if weight.requires_grad:
            full = np.zeros_like(weight.data)
            np.add.at(full, idx.reshape(-1), g.reshape(-1, weight.shape[1]))
            _accum(weight, full)
    return _result(weight.data[idx], (weight,), backward)


# --- normalisation / probabilities -------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return _result(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        _accum(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))
    return _result(out, (a,), backward)


def pick(a, indices) -> Tensor:
    """``a[..., indices[...]]`` along the last axis (for gathering log-probs)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)[..., None]
    out = np.take_along_axis(a.data, idx, axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        _accum(a, full)
    return _result(out, (a,), backward)


def layer_norm(a, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    parents = tuple(t for t in (a, gain, bias) if t is not None)

    def backward(g):
        gx = g * gain.data if gain is not None else g
        if a.requires_grad:
            n = a.shape[-1]
            _accum(a, inv / n * (n * gx - gx.sum(-1, keepdims=True)
                                 - xhat * (gx * xhat).sum(-1, keepdims=True)))
        if gain is not None and gain.requires_grad:
            _accum(gain, g * xhat)
        if bias is not None and bias.requires_grad:
            _accum(bias, g)
    return _result(out.astype(a.data.dtype, copy=False), parents, backward)


def cosine_similarity(a, b, axis: int = -1, eps: float = 0.0) -> Tensor:
    """Cosine similarity along ``axis`` (inputs broadcast). Zero vectors are rejected."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("cosine_similarity", a, b)
    na = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True))
    nb = np.sqrt((b.data ** 2).sum(axis=axis, keepdims=True))
    if (na <= eps).any() or (nb <= eps).any():
        raise ValueError("cosine_similarity: zero-norm vector")
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    cos = dot / (na * nb)

    def backward(g):
        g = np.expand_dims(g, axis)
        if a.requires_grad:
            _accum(a, g * (b.data / (na * nb) - cos * a.data / na ** 2))
        if b.requires_grad:
            _accum(b, g * (a.data / (na * nb) - cos * b.data / nb ** 2))
    return _result(np.squeeze(cos, axis=axis), (a, b), backward)


# --- driver -------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from scalar ``loss``; clears the record."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = _tape()
    try:
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for node in reversed(tape):
            if node.grad is None:
                continue
            node._backward(node.grad)
            if node is not loss:
                node.grad = None
            node._backward = None
        loss._backward = None
    finally:
        tape.clear()

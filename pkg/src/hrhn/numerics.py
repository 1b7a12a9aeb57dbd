"""Dense tensors with reverse-mode differentiation, plus Adam and gradient checking.

Every operation records its inputs and a closure mapping the output
gradient to input gradients. ``backward`` walks that recorded graph in
reverse topological order. Parameters are the only leaves that keep
gradients; intermediate gradients live for one ``backward`` call only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up in a value or gradient."""


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "__weakref__")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None):
        self.data = data
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: mul(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, key: getitem(self, key)


class Parameter(Tensor):
    """A named learnable tensor with its own gradient buffer."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data):
        super().__init__(np.ascontiguousarray(data))
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def tensor(data, dtype=None) -> Tensor:
    if isinstance(data, Tensor):
        return data
    arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
    _check_finite(arr, "input")
    return Tensor(arr)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {what}")


def _node(data, parents, grad_fn, what) -> Tensor:
    _check_finite(data, what)
    return Tensor(data, parents, grad_fn)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {sa} and {sb}") from None
    return _node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"cannot subtract shapes {sa} and {sb}") from None
    return _node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), grad_fn, "mul")


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # exp(-log(1 + e^-x)) stays finite for any finite x; the clip keeps saturated
    # outputs strictly inside (0, 1) instead of rounding to exactly 0 or 1
    info = np.finfo(x.dtype)
    y = np.exp(-np.logaddexp(0.0, -x.data)).astype(x.dtype, copy=False)
    y = np.clip(y, info.tiny, 1.0 - info.epsneg)
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy broadcasting over leading (batch) axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}") from None

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), grad_fn, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as ``[out, in]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def grad_fn(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, grad_fn, "linear")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    if x.data.size == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax of an empty tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (x,), grad_fn, "softmax")


# ---------------------------------------------------------------- reductions and shape


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(out), (x,), grad_fn, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None
    return Tensor(out, (x,), lambda g: (g.reshape(old),))


def _is_basic(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in parts)


def getitem(x: Tensor, key) -> Tensor:
    out = x.data[key]
    basic = _is_basic(key)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Tensor(np.array(out), (x,), grad_fn)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return Tensor(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"cannot concatenate shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(out, tuple(tensors), grad_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"cannot stack shapes {shapes}") from None

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor(out, tuple(tensors), grad_fn)


# ---------------------------------------------------------------- convolution


def conv1d(x: Tensor, kernels: Tensor) -> Tensor:
    """Valid, stride-1 cross-correlation; ``x`` is ``[N, C_in, L]``, kernels ``[C_out, C_in, q]``."""
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernels {kernels.shape}")
    q, length = kernels.shape[2], x.shape[2]
    if length < q:
        raise ShapeError(f"conv1d: input length {length} shorter than kernel width {q}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(kernels.data, dtype=xd.dtype)
    out = _kernels.conv1d_forward(xd, wd)

    def grad_fn(g):
        return _kernels.conv1d_backward(xd, wd, np.ascontiguousarray(g))

    return _node(out, (x, kernels), grad_fn, "conv1d")


def max_pool1d(x: Tensor, width: int) -> Tensor:
    """Non-overlapping max over windows of ``width``; a short last window is kept."""
    if width < 1:
        raise ShapeError(f"pool width must be >= 1, got {width}")
    if x.ndim != 3 or x.shape[2] < 1:
        raise ShapeError(f"max_pool1d expects [N, C, L>=1], got {x.shape}")
    length = x.shape[2]
    out, idx = _kernels.maxpool_forward(np.ascontiguousarray(x.data), int(width))
    return Tensor(out, (x,), lambda g: (_kernels.maxpool_backward(np.ascontiguousarray(g), idx, length),))


# ---------------------------------------------------------------- differentiation


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable ``Parameter.grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(state: AdamState, params: Iterable[Parameter]) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    All gradients are checked before anything is touched, so a refused step
    leaves parameters and moments exactly as they were.
    """
    params = list(params)
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NonFiniteError(f"non-finite gradient in {p.name}; Adam step refused")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p in params:
        m = state.first_moment.get(p.name)
        if m is None:
            m = state.first_moment[p.name] = np.zeros_like(p.data)
            state.second_moment[p.name] = np.zeros_like(p.data)
        v = state.second_moment[p.name]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.data -= update.astype(p.dtype, copy=False)


# ---------------------------------------------------------------- gradient checking


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def gradient_check_groups(
    model_fn: Callable[[], Tensor], params: Sequence[Parameter], perturbation: float = 1e-5
) -> dict[str, float]:
    """Worst relative error per parameter, analytic vs. central differences."""
    if perturbation <= 0:
        raise ValueError("perturbation must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(model_fn())
    worst = {}
    for p in params:
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            try:
                flat[i] = orig + perturbation
                up = float(model_fn().data)
                flat[i] = orig - perturbation
                down = float(model_fn().data)
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite loss while perturbing {p.name}[{i}]") from exc
            finally:
                flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite loss while perturbing {p.name}[{i}]")
            numeric[i] = (up - down) / (2.0 * perturbation)
        err = relative_error(p.grad.reshape(-1).astype(np.float64), numeric)
        worst[p.name] = float(err.max()) if err.size else 0.0
    return worst


def gradient_check(model_fn: Callable[[], Tensor], params: Sequence[Parameter], perturbation: float = 1e-5) -> float:
    worst = gradient_check_groups(model_fn, params, perturbation)
    return max(worst.values(), default=0.0)

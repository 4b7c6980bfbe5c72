"""Small reverse-mode autodiff over dense float64 arrays.

Operations executed while a :class:`Tape` is active are recorded on it; calling
:func:`backward` replays them in reverse to produce gradients for every array
created with ``requires_grad=True``.  Outside a tape every operation is a plain
numpy computation.

The spatial operators work on batched ``N x C x H x W`` inputs (an unbatched
``C x H x W`` input is accepted and returned unbatched).
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DomainError, GraphError, ShapeError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "voldiff_active_tape", default=None
)


class Array:
    """A float64 ndarray that can take part in gradient tracking."""

    __slots__ = ("data", "requires_grad", "__weakref__")
    __array_ufunc__ = None  # ndarray <op> Array defers to Array's reflected ops

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Array(shape={self.shape}{flag})"

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
        return negate(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return asum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_array(x) -> Array:
    return x if isinstance(x, Array) else Array(x)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Array, inputs: tuple[Array, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Gradients:
    """Mapping from arrays to their accumulated gradients.

    Arrays that never received a contribution map to zeros of their shape.
    """

    def __init__(self, grads: dict[int, np.ndarray], keep: dict[int, Array]):
        self._grads = grads
        self._keep = keep

    def __getitem__(self, arr: Array) -> np.ndarray:
        g = self._grads.get(id(arr))
        if g is None or self._keep.get(id(arr)) is not arr:
            return np.zeros(arr.shape)
        return g

    def __contains__(self, arr: Array) -> bool:
        return id(arr) in self._grads and self._keep.get(id(arr)) is arr


class Tape:
    """Ordered record of operations; use as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None
        self._produced: dict[int, Array] = {}

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, out: Array, inputs: tuple[Array, ...], vjp: Callable) -> None:
        self.nodes.append(_Node(out, inputs, vjp))
        self._produced[id(out)] = out

    def produced(self, arr: Array) -> bool:
        return self._produced.get(id(arr)) is arr

    def backward(self, loss: Array) -> Gradients:
        return backward(self, loss)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def primitive(out_data: np.ndarray, inputs: Sequence, vjp: Callable) -> Array:
    """Wrap ``out_data`` as the result of a differentiable operation.

    ``vjp(g)`` must return one gradient (or None) per input, each already
    shaped like that input.
    """
    inputs = tuple(as_array(x) for x in inputs)
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(x.requires_grad for x in inputs)
    out = Array(out_data, requires_grad=track)
    if track:
        tape.record(out, inputs, vjp)
    return out


def backward(tape: Tape, loss: Array) -> Gradients:
    """Reverse-mode sweep from a scalar ``loss`` recorded on ``tape``."""
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    keep: dict[int, Array] = {}
    grads: dict[int, np.ndarray] = {}
    if not tape.produced(loss):
        raise GraphError("loss was not produced on this tape")
    grads[id(loss)] = np.ones(loss.shape)
    keep[id(loss)] = loss
    for node in reversed(tape.nodes):
        g = grads.get(id(node.out))
        if g is None:
            continue
        parts = node.vjp(g)
        for x, gx in zip(node.inputs, parts):
            if gx is None or not x.requires_grad:
                continue
            if gx.shape != x.shape:
                raise ShapeError(f"internal: gradient shape {gx.shape} != {x.shape}")
            prev = grads.get(id(x))
            grads[id(x)] = gx if prev is None else prev + gx
            keep[id(x)] = x
    return Gradients(grads, keep)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Array, b: Array) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    _check_broadcast(a, b)
    return primitive(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    _check_broadcast(a, b)
    return primitive(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    _check_broadcast(a, b)
    return primitive(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    _check_broadcast(a, b)
    out = a.data / b.data
    return primitive(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def negate(a) -> Array:
    a = as_array(a)
    return primitive(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Array:
    a = as_array(a)
    c = float(c)
    return primitive(a.data * c, (a,), lambda g: (g * c,))


def exp(a) -> Array:
    a = as_array(a)
    out = np.exp(a.data)
    return primitive(out, (a,), lambda g: (g * out,))


def log(a) -> Array:
    a = as_array(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    return primitive(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a) -> Array:
    a = as_array(a)
    return primitive(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sigmoid(a) -> Array:
    a = as_array(a)
    s = expit(a.data)
    return primitive(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Array:
    a = as_array(a)
    s = expit(a.data)
    return primitive(
        a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),)
    )


def relu(a) -> Array:
    """Hinge ``max(0, x)``; the subgradient at exactly 0 is taken as 0."""
    a = as_array(a)
    mask = a.data > 0
    return primitive(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def clip(a, lo: float, hi: float) -> Array:
    """Clamp to ``[lo, hi]``; gradient passes inside the range, zero outside."""
    a = as_array(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return primitive(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


_UNARY = {
    "silu": silu,
    "exp": exp,
    "log": log,
    "negate": negate,
}
_BINARY = {"add": add, "mul": mul, "sub": sub, "div": div}


def elementwise(op_kind: str, a, b=None) -> Array:
    """Dispatch by name; ``scale`` takes its factor as ``b``."""
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    if op_kind in _BINARY:
        if b is None:
            raise ShapeError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------- reductions / shape


def asum(a, axis=None) -> Array:
    a = as_array(a)
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return primitive(out, (a,), vjp)


def mean(a, axis=None) -> Array:
    a = as_array(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(asum(a, axis), 1.0 / float(n))


def reshape(a, shape) -> Array:
    a = as_array(a)
    return primitive(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Array:
    a = as_array(a)

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, index, g)
        return (out,)

    return primitive(np.array(a.data[index]), (a,), vjp)


def concat(arrays: Iterable, axis: int = 0) -> Array:
    arrays = tuple(as_array(x) for x in arrays)
    sizes = [x.shape[axis] for x in arrays]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(arrays))
        )

    try:
        out = np.concatenate([x.data for x in arrays], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return primitive(out, arrays, vjp)


# ---------------------------------------------------------------- linear algebra


def linear(x, weight, bias=None) -> Array:
    """Affine map ``x @ weight.T + bias`` over the last axis of ``x``."""
    x, weight = as_array(x), as_array(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    inputs = (x, weight)
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_array(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
        out = out + bias.data
        inputs = inputs + (bias,)

    def vjp(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        gw = g2.T @ x2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return primitive(out, inputs, vjp)


# ---------------------------------------------------------------- spatial


def conv2d(x, kernels, bias=None, padding: int = 0, stride: int = 1) -> Array:
    """Cross-correlation of ``x`` (N,C,H,W or C,H,W) with (O,C,kh,kw) kernels."""
    x, kernels = as_array(x), as_array(kernels)
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), kernels, bias, padding, stride)
        return reshape(out, out.shape[1:])
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks {x.shape}, {kernels.shape}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernels.shape
    if c != ck:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {ck}")
    p, s = int(padding), int(stride)
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    # im2col laid out (C, kh, kw, N, Ho, Wo) so both GEMMs read contiguous memory
    cols = np.empty((c, kh, kw, n, ho, wo))
    for a in range(kh):
        for b in range(kw):
            cols[:, a, b] = xp[:, :, a : a + s * ho : s, b : b + s * wo : s].transpose(1, 0, 2, 3)
    cols2 = cols.reshape(c * kh * kw, n * ho * wo)
    w2 = kernels.data.reshape(o, c * kh * kw)
    out = (w2 @ cols2).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    inputs = (x, kernels)
    if bias is not None:
        bias = as_array(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias {bias.shape} vs {o} output channels")
        out = out + bias.data[None, :, None, None]
        inputs = inputs + (bias,)

    def vjp(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gk = (g2 @ cols2.T).reshape(kernels.shape)
        gcols = (w2.T @ g2).reshape(c, kh, kw, n, ho, wo)
        gxp = np.zeros(xp.shape)
        for a in range(kh):
            for b in range(kw):
                gxp[:, :, a : a + s * ho : s, b : b + s * wo : s] += gcols[:, a, b].transpose(1, 0, 2, 3)
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return primitive(np.ascontiguousarray(out), inputs, vjp)


def _nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    idx = (np.arange(n_out) * n_in) // n_out
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), idx] = 1.0
    return m


def upsample_nearest(x, size: tuple[int, int]) -> Array:
    """Nearest-neighbour resize of the last two axes to ``size``."""
    x = as_array(x)
    uh = _nearest_matrix(x.shape[-2], size[0])
    uw = _nearest_matrix(x.shape[-1], size[1])
    out = uh @ x.data @ uw.T
    return primitive(out, (x,), lambda g: (uh.T @ g @ uw,))


def film(features, gamma, beta) -> Array:
    """Per-channel affine modulation ``gamma * F + beta``.

    ``features`` is (N,C,H,W); ``gamma`` and ``beta`` are (N,C).
    """
    features, gamma, beta = as_array(features), as_array(gamma), as_array(beta)
    c = features.shape[1]
    if gamma.shape[-1] != c or beta.shape[-1] != c:
        raise ShapeError(
            f"film: feature map has {c} channels, modulation has "
            f"{gamma.shape[-1]}/{beta.shape[-1]}"
        )
    g4 = reshape(gamma, gamma.shape + (1, 1))
    b4 = reshape(beta, beta.shape + (1, 1))
    return add(mul(g4, features), b4)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))

"""
Dense double-precision tensor with reverse-mode differentiation.

Every model component in the package composes the primitives defined here:
fully-connected maps, depthwise temporal convolution, pooling, softmax and
the two normalizations, plus the elementwise algebra needed by the losses.
Each primitive records a closure that maps the gradient of its output to the
gradients of its inputs; ``backward`` replays those closures in reverse
topological order. ``grad_check`` compares the result with central finite
differences.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from utils.exceptions import (
    ConfigurationError,
    DimensionError,
    EmptyInputError,
    GraphStateError,
    NumericError,
)
from utils.validators import validate_groups, validate_odd_window

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

NORM_EPS = 1e-5

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread (inference, finite differences)."""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so ``grad`` matches ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    A real array over (time, channels) that can take part in a recorded graph.

    Attributes:
        data: float64 values
        grad: accumulated gradient (leaves only), same shape as ``data``
        requires_grad: whether gradients flow to this tensor
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
        _op: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._kink: Optional[Callable[[], float]] = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return self.data.shape[0]

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single value, got shape {self.shape}", error_code="NON_SCALAR")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Same values, cut from the graph."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    # --------------------------------------------------------------- operators
    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = _as_tensor(other)
        if not other.requires_grad:
            return mul(self, 1.0 / other.data)
        return mul(self, power(other, -1.0))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def exp(self) -> "Tensor":
        return texp(self)

    def log(self) -> "Tensor":
        return tlog(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def clip(self, lo: float, hi: float) -> "Tensor":
        return clip(self, lo, hi)


class Parameter(Tensor):
    """A named trainable leaf whose gradient accumulates across uses."""

    def __init__(self, value: ArrayLike, name: str):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(
    data: np.ndarray,
    parents: Tuple[Tensor, ...],
    backward_fn: BackwardFn,
    op: str,
    kink: Optional[Callable[[], float]] = None,
) -> Tensor:
    """
    Wrap an op result, recording the graph edge only when a parent needs it.

    ``kink`` reports how far the op's inputs sit from the nearest point where
    it stops being differentiable; ``kink_margin`` collects it over a graph.
    """
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)
        out._kink = kink
        return out
    return Tensor(data)


def _closest(gap: np.ndarray) -> float:
    gap = np.abs(gap)
    return float(gap.min()) if gap.size else np.inf


# ---------------------------------------------------------------- elementwise
def add(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def mul(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),), "pow")


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def tlog(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(
        np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu", kink=lambda: _closest(a.data)
    )


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(
        np.clip(a.data, lo, hi),
        (a,),
        lambda g: (g * mask,),
        "clip",
        kink=lambda: min(_closest(a.data - lo), _closest(a.data - hi)),
    )


def maximum(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data >= b.data
    return _make(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
        "maximum",
        kink=lambda: _closest(a.data - b.data),
    )


def minimum(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data <= b.data
    return _make(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
        "minimum",
        kink=lambda: _closest(a.data - b.data),
    )


# ------------------------------------------------------------- shape / reduce
def tsum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def take(a: Tensor, index) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in backward."""

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"Cannot multiply shapes {a.shape} and {b.shape}",
            error_code="DIM_MISMATCH",
            details={"left": a.shape, "right": b.shape},
        )
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


# ------------------------------------------------------------ model primitives
def fc_forward(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Fully-connected map applied at every instant: out[t, j] = sum_i x[t, i] W[i, j] + b[j].

    Raises:
        DimensionError: If the inner dimensions disagree (names both shapes)
    """
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(
            f"fc_forward: input shape {x.shape} does not match weight shape {W.shape}",
            error_code="DIM_MISMATCH",
            details={"input": x.shape, "weight": W.shape},
        )
    out = matmul(x, W)
    if b is not None:
        if b.shape != (W.shape[1],):
            raise DimensionError(
                f"fc_forward: bias shape {b.shape} does not match weight shape {W.shape}",
                error_code="DIM_MISMATCH",
                details={"bias": b.shape, "weight": W.shape},
            )
        out = out + b
    return out


def depthwise_conv1d(x: Tensor, kernel: Tensor, w: int) -> Tensor:
    """
    Per-channel temporal convolution with "same" zero padding.

    out[t, d] = sum_j x[t + j - (w-1)/2, d] * kernel[d, j]

    Args:
        x: [T, D] features
        kernel: [D, w] per-channel taps
        w: odd window size

    Raises:
        ConfigurationError: If ``w`` is not a positive odd integer
        DimensionError: If the kernel does not match ``x`` and ``w``
    """
    check = validate_odd_window(w)
    if not check:
        raise ConfigurationError(f"depthwise_conv1d: {check.message}", error_code="EVEN_WINDOW")
    if x.ndim != 2 or kernel.shape != (x.shape[1], w):
        raise DimensionError(
            f"depthwise_conv1d: input shape {x.shape} does not match kernel shape {kernel.shape} for w={w}",
            error_code="DIM_MISMATCH",
            details={"input": x.shape, "kernel": kernel.shape},
        )
    T = x.shape[0]
    pad = (w - 1) // 2
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    k = kernel.data
    out = np.zeros_like(x.data)
    for j in range(w):
        out += xp[j:j + T] * k[:, j]

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        gxp = np.zeros_like(xp)
        gk = np.empty_like(k)
        for j in range(w):
            gxp[j:j + T] += g * k[:, j]
            gk[:, j] = (xp[j:j + T] * g).sum(axis=0)
        return gxp[pad:pad + T], gk

    return _make(out, (x, kernel), backward, "dwconv")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the temporal axis: [T, D] -> [1, D]."""
    if x.shape[0] == 0:
        raise EmptyInputError("global_avg_pool: empty temporal axis", error_code="EMPTY_INPUT")
    return x.mean(axis=0, keepdims=True)


def max_pool_stride2(x: Tensor) -> Tensor:
    """Kernel-2 stride-2 temporal max pooling; an odd tail passes through alone."""
    T = x.shape[0]
    if T == 0:
        raise EmptyInputError("max_pool_stride2: empty temporal axis", error_code="EMPTY_INPUT")
    out_len = (T + 1) // 2
    padded = x.data
    if T % 2:
        padded = np.concatenate([padded, np.full((1,) + x.shape[1:], -np.inf)], axis=0)
    pairs = padded.reshape((out_len, 2) + x.shape[1:])
    arg = np.argmax(pairs, axis=1)
    out = np.take_along_axis(pairs, arg[:, None], axis=1)[:, 0]
    rows = 2 * np.arange(out_len).reshape((out_len,) + (1,) * (x.ndim - 1)) + arg

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(x.shape[1]) if x.ndim == 2 else 0, rows.shape)
        if x.ndim == 2:
            np.add.at(full, (rows, cols), g)
        else:
            np.add.at(full, rows, g)
        return (full,)

    return _make(out, (x,), backward, "maxpool", kink=lambda: _closest(pairs[:, 0] - pairs[:, 1]))


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    """
    Max-shifted softmax along ``axis``.

    Raises:
        NumericError: If any input is NaN or infinite
    """
    if not np.all(np.isfinite(v.data)):
        raise NumericError("softmax: input contains non-finite values", error_code="NON_FINITE")
    shifted = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (v,), backward, "softmax")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """
    Normalize each instant over contiguous channel groups, then apply the affine map.

    Raises:
        ConfigurationError: If ``groups`` does not divide the channel dim
    """
    T, D = x.shape
    check = validate_groups(D, groups)
    if not check:
        raise ConfigurationError(f"group_norm: {check.message}", error_code="BAD_GROUPS")
    n = D // groups
    xg = x.data.reshape(T, groups, n)
    mu = xg.mean(axis=2, keepdims=True)
    centered = xg - mu
    var = (centered * centered).mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv_std).reshape(T, D)
    out = xhat * gamma.data + beta.data

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = (g * gamma.data).reshape(T, groups, n)
        xh = xhat.reshape(T, groups, n)
        dx = inv_std / n * (
            n * dxhat
            - dxhat.sum(axis=2, keepdims=True)
            - xh * (dxhat * xh).sum(axis=2, keepdims=True)
        )
        return dx.reshape(T, D), (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(out, (x, gamma, beta), backward, "groupnorm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize each instant over all channels (group_norm with a single group)."""
    return group_norm(x, 1, gamma, beta, eps)


# ------------------------------------------------------------------- backward
def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack_: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def kink_margin(root: Tensor) -> float:
    """
    Smallest distance from any recorded input to a point where its op has a kink.

    Covers relu at zero, clip at its bounds, ties in maximum/minimum and ties
    inside max-pool pairs. Finite differences with step h are only reliable
    when this exceeds h by a comfortable factor. Returns ``inf`` for a graph
    without such ops.
    """
    margins = [node._kink() for node in _topological_order(root) if node._kink is not None]
    return min(margins, default=np.inf)


def backward(loss: Tensor) -> None:
    """
    Populate ``grad`` of every leaf reachable from a scalar loss.

    Raises:
        GraphStateError: If ``loss`` carries no recorded forward graph or is not scalar
    """
    if not loss.requires_grad:
        raise GraphStateError(
            "backward called on a tensor with no recorded forward pass",
            error_code="NO_GRAPH",
        )
    if loss.data.size != 1:
        raise GraphStateError(
            f"backward needs a scalar loss, got shape {loss.shape}",
            error_code="NON_SCALAR",
        )
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
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
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Compare analytic gradients against central finite differences.

    Args:
        f: Deterministic closure returning a scalar loss built from ``params``
        params: Leaves to check (Parameters or tensors with requires_grad)
        h: Finite-difference step
        max_entries: Optional per-parameter cap on checked entries (sampled with ``rng``)
        rng: Generator for entry sampling

    Returns:
        Worst relative error |a - n| / max(1e-8, |a| + |n|) over checked entries
    """
    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(f())
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    worst_name = ""
    rng = rng or np.random.default_rng(0)
    with no_grad():
        for p, a_grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            indices: Iterable[int] = range(flat.size)
            if max_entries is not None and flat.size > max_entries:
                indices = rng.choice(flat.size, size=max_entries, replace=False)
            a_flat = a_grad.reshape(-1)
            for i in indices:
                original = flat[i]
                flat[i] = original + h
                f_plus = f().item()
                flat[i] = original - h
                f_minus = f().item()
                flat[i] = original
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = a_flat[i]
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                if err > worst:
                    worst, worst_name = err, getattr(p, "name", "tensor")
    logger.debug(f"grad_check worst relative error {worst:.3e} ({worst_name or 'n/a'})")
    return worst

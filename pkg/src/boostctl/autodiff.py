"""Reverse-mode automatic differentiation on an append-only tape, plus Adam.

Values are float64 numpy arrays.  A :class:`Var` wraps one array; every
primitive applied to a ``Var`` while a :class:`Tape` is active appends a node
holding its inputs, a forward closure and a vector-Jacobian product.  The
module-level helpers (``tanh``, ``matmul``, ``maximum`` ...) dispatch: plain
arrays go straight to numpy, so the same model code runs with or without a
tape and produces bit-identical primal values.

Subgradients of ``min``/``max`` (reductions, elementwise and cumulative) are
routed to the attained argument, ties resolved to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "Var", "Tape", "NonFiniteError", "grad", "value_of", "is_var",
    "add", "sub", "mul", "div", "neg", "power", "reciprocal", "matmul",
    "tanh", "exp", "sqrt", "square", "sum", "mean", "norm",
    "maximum", "minimum", "max", "min", "cummax", "cummin",
    "stack", "concatenate", "reshape", "transpose", "getitem",
    "solve", "inv", "tril", "diag", "diag_embed", "zeros_like",
    "AdamState", "adam_step", "Adam",
]


class NonFiniteError(FloatingPointError):
    """Raised when a taped primitive produces a NaN or infinity."""

    def __init__(self, op: str, position: int):
        super().__init__(f"non-finite value produced by '{op}' at tape position {position}")
        self.op = op
        self.position = position


_ACTIVE: list["Tape"] = []


class Var:
    """A differentiable array value."""

    __slots__ = ("value", "grad", "_node", "__weakref__")
    __array_priority__ = 1000.0

    def __init__(self, value, _node: "_Node | None" = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._node = _node

    # array-like surface
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Var({self.value!r})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class _Node:
    op: str
    inputs: tuple
    out: Var
    fwd: Callable[..., np.ndarray]
    vjp: Callable[..., tuple]
    position: int = -1


@dataclass
class Tape:
    """Append-only record of primitive applications.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    nodes: list[_Node] = field(default_factory=list)
    check_finite: bool = True

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def variable(self, value) -> Var:
        return Var(np.array(value, dtype=np.float64, copy=True))

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from stored inputs in tape order."""
        fresh: dict[int, np.ndarray] = {}
        out = []
        for node in self.nodes:
            args = [fresh.get(id(a), a.value) if isinstance(a, Var) else a for a in node.inputs]
            val = node.fwd(*args)
            fresh[id(node.out)] = val
            out.append(val)
        return out

    def backward(self, out: Var, seed=None) -> None:
        """Accumulate d(out)/d(v) into ``v.grad`` for every reachable Var."""
        if seed is None:
            if out.value.size != 1:
                raise ValueError("backward needs a scalar output or an explicit seed")
            seed = np.ones_like(out.value)
        grads: dict[int, np.ndarray] = {id(out): np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            node.out.grad = g
            parts = node.vjp(g, *[a.value if isinstance(a, Var) else a for a in node.inputs])
            for a, ga in zip(node.inputs, parts):
                if not isinstance(a, Var) or ga is None:
                    continue
                k = id(a)
                if k in grads:
                    grads[k] = grads[k] + ga
                else:
                    grads[k] = ga
                if a._node is None:
                    a.grad = grads[k]
        if out._node is None:
            out.grad = grads.get(id(out), out.grad)


def is_var(x: Any) -> bool:
    return isinstance(x, Var)


def value_of(x: Any) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _record(op: str, fwd, vjp, *inputs) -> Var:
    val = fwd(*[a.value if isinstance(a, Var) else a for a in inputs])
    out = Var(val)
    if _ACTIVE:
        tape = _ACTIVE[-1]
        node = _Node(op, inputs, out, fwd, vjp, len(tape.nodes))
        if tape.check_finite and not np.all(np.isfinite(out.value)):
            raise NonFiniteError(op, node.position)
        tape.nodes.append(node)
        out._node = node
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _shape(x) -> tuple[int, ...]:
    return np.shape(x)


def _any_var(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


# elementwise arithmetic

def add(a, b):
    if not _any_var(a, b):
        return np.add(a, b)
    return _record("add", np.add,
                   lambda g, x, y: (_unbroadcast(g, _shape(x)), _unbroadcast(g, _shape(y))), a, b)


def sub(a, b):
    if not _any_var(a, b):
        return np.subtract(a, b)
    return _record("sub", np.subtract,
                   lambda g, x, y: (_unbroadcast(g, _shape(x)), _unbroadcast(-g, _shape(y))), a, b)


def mul(a, b):
    if not _any_var(a, b):
        return np.multiply(a, b)
    return _record("mul", np.multiply,
                   lambda g, x, y: (_unbroadcast(g * y, _shape(x)), _unbroadcast(g * x, _shape(y))), a, b)


def div(a, b):
    if not _any_var(a, b):
        return np.divide(a, b)
    return _record("div", np.divide,
                   lambda g, x, y: (_unbroadcast(g / y, _shape(x)),
                                    _unbroadcast(-g * x / (y * y), _shape(y))), a, b)


def neg(a):
    if not isinstance(a, Var):
        return np.negative(a)
    return _record("neg", np.negative, lambda g, x: (-g,), a)


def power(a, p: float):
    """``a ** p`` for a constant exponent."""
    if not isinstance(a, Var):
        return np.power(a, p)
    return _record("power", lambda x: np.power(x, p),
                   lambda g, x: (g * p * np.power(x, p - 1),), a)


def reciprocal(a):
    if not isinstance(a, Var):
        return np.reciprocal(a)
    return _record("reciprocal", np.reciprocal, lambda g, x: (-g / (x * x),), a)


def square(a):
    if not isinstance(a, Var):
        return np.square(a)
    return _record("square", np.square, lambda g, x: (2.0 * g * x,), a)


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)

    def vjp(g, x):
        t = np.tanh(x)
        return (g * (1.0 - t * t),)
    return _record("tanh", np.tanh, vjp, a)


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    return _record("exp", np.exp, lambda g, x: (g * np.exp(x),), a)


def sqrt(a):
    if not isinstance(a, Var):
        return np.sqrt(a)
    return _record("sqrt", np.sqrt, lambda g, x: (g * 0.5 / np.sqrt(x),), a)


def _mm_vjp(g, x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.ndim == 1 and y.ndim == 1:
        return g * y, g * x
    x2 = x[None, :] if x.ndim == 1 else x
    y2 = y[:, None] if y.ndim == 1 else y
    g2 = np.asarray(g)
    if y.ndim == 1:
        g2 = g2[..., None]
    if x.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    gx = _unbroadcast(g2 @ np.swapaxes(y2, -1, -2), x2.shape)
    gy = _unbroadcast(np.swapaxes(x2, -1, -2) @ g2, y2.shape)
    return gx.reshape(x.shape), gy.reshape(y.shape)


def matmul(a, b):
    if not _any_var(a, b):
        return np.matmul(a, b)
    return _record("matmul", np.matmul, _mm_vjp, a, b)


# reductions

def _expand(g, x_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, x_shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x_shape)


def sum(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    return _record("sum", lambda x: np.sum(x, axis=axis, keepdims=keepdims),
                   lambda g, x: (np.array(_expand(g, x.shape, axis, keepdims)),), a)


def mean(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.mean(a, axis=axis, keepdims=keepdims)
    n = a.value.size if axis is None else a.value.shape[axis]
    return _record("mean", lambda x: np.mean(x, axis=axis, keepdims=keepdims),
                   lambda g, x: (np.array(_expand(g, x.shape, axis, keepdims)) / n,), a)


def norm(a, axis=-1):
    """Euclidean norm along ``axis``."""
    if not isinstance(a, Var):
        return np.sqrt(np.sum(np.square(a), axis=axis))

    def fwd(x):
        return np.sqrt(np.sum(np.square(x), axis=axis))

    def vjp(g, x):
        n = np.expand_dims(fwd(x), axis)
        return (np.expand_dims(g, axis) * x / n,)
    return _record("norm", fwd, vjp, a)


def _arg_reduce(x, axis, pick):
    idx = pick(x, axis=axis)
    return np.expand_dims(idx, axis)


def _reduce_vjp(pick):
    def vjp(g, x, axis, keepdims):
        if axis is None:
            flat = np.zeros(x.size)
            flat[pick(x.reshape(-1))] = 1.0
            return flat.reshape(x.shape) * g
        idx = _arg_reduce(x, axis, pick)
        mask = np.zeros(x.shape)
        np.put_along_axis(mask, idx, 1.0, axis=axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        return mask * gg
    return vjp


_max_vjp = _reduce_vjp(np.argmax)
_min_vjp = _reduce_vjp(np.argmin)


def max(a, axis=None, keepdims=False):
    """Maximum reduction; the subgradient goes to the first maximizer."""
    if not isinstance(a, Var):
        return np.max(a, axis=axis, keepdims=keepdims)
    return _record("max", lambda x: np.max(x, axis=axis, keepdims=keepdims),
                   lambda g, x: (_max_vjp(g, x, axis, keepdims),), a)


def min(a, axis=None, keepdims=False):
    """Minimum reduction; the subgradient goes to the first minimizer."""
    if not isinstance(a, Var):
        return np.min(a, axis=axis, keepdims=keepdims)
    return _record("min", lambda x: np.min(x, axis=axis, keepdims=keepdims),
                   lambda g, x: (_min_vjp(g, x, axis, keepdims),), a)


def maximum(a, b):
    """Elementwise maximum; ties credit the first argument."""
    if not _any_var(a, b):
        return np.maximum(a, b)

    def vjp(g, x, y):
        first = x >= y
        return (_unbroadcast(np.where(first, g, 0.0), _shape(x)),
                _unbroadcast(np.where(first, 0.0, g), _shape(y)))
    return _record("maximum", np.maximum, vjp, a, b)


def minimum(a, b):
    """Elementwise minimum; ties credit the first argument."""
    if not _any_var(a, b):
        return np.minimum(a, b)

    def vjp(g, x, y):
        first = x <= y
        return (_unbroadcast(np.where(first, g, 0.0), _shape(x)),
                _unbroadcast(np.where(first, 0.0, g), _shape(y)))
    return _record("minimum", np.minimum, vjp, a, b)


def _cum_arg(x: np.ndarray, axis: int, better) -> np.ndarray:
    xs = np.moveaxis(x, axis, 0)
    idx = np.zeros(xs.shape, dtype=np.intp)
    best = xs[0].copy()
    cur = np.zeros(xs.shape[1:], dtype=np.intp)
    for k in range(1, xs.shape[0]):
        take = better(xs[k], best)
        best = np.where(take, xs[k], best)
        cur = np.where(take, k, cur)
        idx[k] = cur
    return np.moveaxis(idx, 0, axis)


def _cum_vjp(g, x, axis, better):
    idx = _cum_arg(x, axis, better)
    out = np.zeros(x.shape)
    gm = np.moveaxis(g, axis, 0)
    im = np.moveaxis(idx, axis, 0)
    om = np.moveaxis(out, axis, 0)
    rest = np.indices(gm.shape[1:])
    for k in range(gm.shape[0]):
        np.add.at(om, (im[k],) + tuple(rest), gm[k])
    return out


def cummax(a, axis=0):
    """Running maximum along ``axis``; ties keep the earliest index."""
    if not isinstance(a, Var):
        return np.maximum.accumulate(a, axis=axis)
    return _record("cummax", lambda x: np.maximum.accumulate(x, axis=axis),
                   lambda g, x: (_cum_vjp(g, x, axis, np.greater),), a)


def cummin(a, axis=0):
    """Running minimum along ``axis``; ties keep the earliest index."""
    if not isinstance(a, Var):
        return np.minimum.accumulate(a, axis=axis)
    return _record("cummin", lambda x: np.minimum.accumulate(x, axis=axis),
                   lambda g, x: (_cum_vjp(g, x, axis, np.less),), a)


# structure

def getitem(a, idx):
    if not isinstance(a, Var):
        return np.asarray(a)[idx]

    def vjp(g, x):
        out = np.zeros(x.shape)
        np.add.at(out, idx, g)
        return (out,)
    return _record("getitem", lambda x: x[idx], vjp, a)


def stack(items: Sequence, axis: int = 0):
    items = list(items)
    if not _any_var(*items):
        return np.stack(items, axis=axis)

    def fwd(*xs):
        return np.stack(xs, axis=axis)

    def vjp(g, *xs):
        return tuple(np.take(g, k, axis=axis) for k in range(len(xs)))
    return _record("stack", fwd, vjp, *items)


def concatenate(items: Sequence, axis: int = -1):
    items = list(items)
    if not _any_var(*items):
        return np.concatenate(items, axis=axis)
    sizes = [np.shape(x)[axis] for x in items]
    cuts = np.cumsum(sizes)[:-1]

    def fwd(*xs):
        return np.concatenate(xs, axis=axis)

    def vjp(g, *xs):
        return tuple(np.split(g, cuts, axis=axis))
    return _record("concatenate", fwd, vjp, *items)


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    return _record("reshape", lambda x: np.reshape(x, shape),
                   lambda g, x: (np.reshape(g, x.shape),), a)


def transpose(a):
    if not isinstance(a, Var):
        return np.transpose(a)
    return _record("transpose", np.transpose, lambda g, x: (np.transpose(g),), a)


def zeros_like(a):
    return np.zeros(np.shape(value_of(a)))


# linear algebra

def solve(a, b):
    """Solve ``a @ x = b`` for square ``a``."""
    if not _any_var(a, b):
        return np.linalg.solve(a, b)

    def vjp(g, x, y):
        sol = np.linalg.solve(x, y)
        gb = np.linalg.solve(x.T, g)
        ga = -np.outer(gb, sol) if sol.ndim == 1 else -gb @ sol.T
        return ga, gb
    return _record("solve", np.linalg.solve, vjp, a, b)


def inv(a):
    if not isinstance(a, Var):
        return np.linalg.inv(a)

    def vjp(g, x):
        ai = np.linalg.inv(x)
        return (-ai.T @ g @ ai.T,)
    return _record("inv", np.linalg.inv, vjp, a)


def tril(a, k: int = 0):
    if not isinstance(a, Var):
        return np.tril(a, k)
    return _record("tril", lambda x: np.tril(x, k), lambda g, x: (np.tril(g, k),), a)


def diag(a):
    """Diagonal of a square matrix as a vector."""
    if not isinstance(a, Var):
        return np.diag(a).copy()
    return _record("diag", lambda x: np.diag(x).copy(), lambda g, x: (np.diag(g),), a)


def diag_embed(a):
    """Square matrix with ``a`` on its diagonal."""
    if not isinstance(a, Var):
        return np.diag(a)
    return _record("diag_embed", np.diag, lambda g, x: (np.diag(g).copy(),), a)


def grad(loss_fn: Callable[[Var], Var], theta) -> tuple[float, np.ndarray]:
    """Value and gradient of a scalar function of a parameter vector."""
    with Tape() as tape:
        th = tape.variable(theta)
        out = loss_fn(th)
        if not isinstance(out, Var):
            return float(out), np.zeros_like(np.asarray(theta, dtype=float))
        tape.backward(out)
    g = th.grad if th.grad is not None else np.zeros_like(th.value)
    return float(out.value), np.array(g, dtype=np.float64)


# Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, theta: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam update.  Mutates ``state`` and returns the new theta."""
    theta = np.asarray(theta, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if theta.shape != state.m.shape or gradient.shape != theta.shape:
        raise ValueError("theta, gradient and Adam moments must share a shape")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * gradient
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * gradient * gradient
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Small stateful wrapper around :func:`adam_step`."""

    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.state = AdamState.fresh(n, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, theta: np.ndarray, gradient: np.ndarray) -> np.ndarray:
        return adam_step(self.state, theta, gradient)

"""Causal operators as stateful step machines, their algebra and inverses.

Step contract: an operator declares a causality class per input slot.  At
step ``t`` a *causal* slot receives ``x_t``; a *strictly causal* slot
receives ``x_{t-1}`` (zeros at ``t = 0``, which the operator must ignore).
Strict causality is therefore structural: such a slot never sees the
current sample.  :func:`evaluate` performs the shifting for whole sequences.
"""

from __future__ import annotations

import copy
import enum
from typing import Callable, Sequence as Seq

import numpy as np

from . import autodiff as ad


class Causality(enum.Enum):
    CAUSAL = "causal"
    STRICT = "strict"


C = Causality.CAUSAL
S = Causality.STRICT


class DimensionError(ValueError):
    pass


class CausalityError(ValueError):
    pass


class HorizonError(RuntimeError):
    pass


def _zeros(like, dim: int) -> np.ndarray:
    shape = np.shape(ad.value_of(like))[:-1] + (dim,)
    return np.zeros(shape)


class CausalOperator:
    """Base class.  Subclasses implement ``_step`` and optionally ``_reset``."""

    in_dims: tuple[int, ...]
    out_dim: int
    causality: tuple[Causality, ...]

    def __init__(self, in_dims: Seq[int], out_dim: int, causality: Seq[Causality]):
        self.in_dims = tuple(int(d) for d in in_dims)
        self.out_dim = int(out_dim)
        self.causality = tuple(causality)
        if len(self.in_dims) != len(self.causality):
            raise ValueError("one causality class per input slot")
        self.t = 0

    @property
    def n_slots(self) -> int:
        return len(self.in_dims)

    @property
    def strictly_causal(self) -> bool:
        return all(c is S for c in self.causality)

    def reset(self) -> "CausalOperator":
        self.t = 0
        self._reset()
        return self

    def _reset(self) -> None:
        pass

    def step(self, *xs):
        if len(xs) != self.n_slots:
            raise DimensionError(f"expected {self.n_slots} input slot(s), got {len(xs)}")
        out = self._step(*xs)
        self.t += 1
        return out

    def _step(self, *xs):
        raise NotImplementedError

    def clone(self) -> "CausalOperator":
        return copy.deepcopy(self)

    def __call__(self, *xs):
        return evaluate(self, *xs)


def evaluate(op: CausalOperator, *xs, reset: bool = True):
    """Run ``op`` over whole sequences (time on axis 0).  Returns an array."""
    if len(xs) != op.n_slots:
        raise DimensionError(f"expected {op.n_slots} input sequence(s), got {len(xs)}")
    arrs = [np.asarray(x, dtype=float) for x in xs]
    for a, d in zip(arrs, op.in_dims):
        if a.ndim < 2 or a.shape[-1] != d:
            raise DimensionError(f"input of shape {a.shape} does not match slot dimension {d}")
    horizon = arrs[0].shape[0] - 1
    if any(a.shape[0] - 1 != horizon for a in arrs):
        raise DimensionError("all input sequences need the same horizon")
    if reset:
        op.reset()
    out = []
    for t in range(horizon + 1):
        args = []
        for a, c in zip(arrs, op.causality):
            if c is C:
                args.append(a[t])
            else:
                args.append(a[t - 1] if t > 0 else np.zeros_like(a[0]))
        out.append(np.asarray(op.step(*args), dtype=float))
    return np.stack(out)


class StepOperator(CausalOperator):
    """Operator from a pure step function ``(t, state, *xs) -> (out, state)``."""

    def __init__(self, fn: Callable, state0, in_dims, out_dim, causality, name: str = "step"):
        super().__init__(in_dims, out_dim, causality)
        self.fn = fn
        self.state0 = state0
        self.state = copy.deepcopy(state0)
        self.name = name

    def _reset(self):
        self.state = copy.deepcopy(self.state0)

    def _step(self, *xs):
        out, self.state = self.fn(self.t, self.state, *xs)
        return out


class Identity(CausalOperator):
    def __init__(self, dim: int):
        super().__init__((dim,), dim, (C,))

    def _step(self, x):
        return x


class StaticMap(CausalOperator):
    """Memoryless causal map ``x_t -> fn(x_t)``."""

    def __init__(self, fn: Callable, in_dim: int, out_dim: int, name: str = "static"):
        super().__init__((in_dim,), out_dim, (C,))
        self.fn = fn
        self.name = name

    def _step(self, x):
        return self.fn(x)


class StaticGain(CausalOperator):
    """``x_t -> K x_t`` with a matrix or scalar ``K``."""

    def __init__(self, gain, dim: int | None = None):
        k = np.asarray(gain, dtype=float)
        if k.ndim == 0:
            if dim is None:
                raise ValueError("scalar gain needs dim")
            k = k * np.eye(dim)
        super().__init__((k.shape[1],), k.shape[0], (C,))
        self.gain = k

    def _step(self, x):
        return ad.matmul(x, self.gain.T)


class Delay(CausalOperator):
    """Unit delay ``y_t = x_{t-1}`` with stored ``y_0``."""

    def __init__(self, dim: int, initial=None):
        super().__init__((dim,), dim, (S,))
        self.initial = np.zeros(dim) if initial is None else np.asarray(initial, dtype=float)

    def _step(self, x_prev):
        if self.t == 0:
            return self.initial + 0.0 * ad.value_of(x_prev)
        return x_prev


class ZeroOperator(CausalOperator):
    def __init__(self, in_dims, out_dim: int, causality=None):
        if causality is None:
            causality = (C,) * len(tuple(in_dims))
        super().__init__(in_dims, out_dim, causality)

    def _step(self, *xs):
        return _zeros(xs[0], self.out_dim)


class _Feeder:
    """Adapts a composite's per-slot inputs to a child's causality classes."""

    def __init__(self, child: CausalOperator, outer: Seq[Causality]):
        self.child = child
        self.outer = tuple(outer)
        self.prev: list = [None] * child.n_slots

    def reset(self):
        self.child.reset()
        self.prev = [None] * self.child.n_slots

    def step(self, *xs):
        args = []
        for k, (x, oc, cc) in enumerate(zip(xs, self.outer, self.child.causality)):
            if oc is C and cc is S:
                args.append(self.prev[k] if self.prev[k] is not None else np.zeros(np.shape(ad.value_of(x))))
                self.prev[k] = x
            else:
                args.append(x)
        return self.child.step(*args)


def _join(*classes: Seq[Causality]) -> tuple[Causality, ...]:
    return tuple(C if any(c is C for c in cs) else S for cs in zip(*classes))


class Sum(CausalOperator):
    """Pointwise sum ``(A + B)x = Ax + Bx``."""

    def __init__(self, a: CausalOperator, b: CausalOperator):
        if a.in_dims != b.in_dims or a.out_dim != b.out_dim:
            raise DimensionError("sum needs matching dimensions")
        cls = _join(a.causality, b.causality)
        super().__init__(a.in_dims, a.out_dim, cls)
        self.parts = [_Feeder(a, cls), _Feeder(b, cls)]

    def _reset(self):
        for p in self.parts:
            p.reset()

    def _step(self, *xs):
        return ad.add(self.parts[0].step(*xs), self.parts[1].step(*xs))


class Scaled(CausalOperator):
    """``c * A`` for a scalar ``c``."""

    def __init__(self, a: CausalOperator, c: float):
        super().__init__(a.in_dims, a.out_dim, a.causality)
        self.a = a
        self.c = float(c)

    def _reset(self):
        self.a.reset()

    def _step(self, *xs):
        return ad.mul(self.c, self.a.step(*xs))


class Stack(CausalOperator):
    """Shared inputs, outputs concatenated: ``x -> (Ax; Bx)``."""

    def __init__(self, *ops: CausalOperator):
        if len({o.in_dims for o in ops}) != 1:
            raise DimensionError("stacked operators need the same inputs")
        cls = _join(*[o.causality for o in ops])
        super().__init__(ops[0].in_dims, sum(o.out_dim for o in ops), cls)
        self.parts = [_Feeder(o, cls) for o in ops]

    def _reset(self):
        for p in self.parts:
            p.reset()

    def _step(self, *xs):
        return ad.concatenate([p.step(*xs) for p in self.parts], axis=-1)


class Compose(CausalOperator):
    """``(AB)x = A(Bx)``; ``a`` must have a single input slot."""

    def __init__(self, a: CausalOperator, b: CausalOperator):
        if a.n_slots != 1:
            raise DimensionError("outer operator of a composition needs one input slot")
        if a.in_dims[0] != b.out_dim:
            raise DimensionError(f"cannot compose: {b.out_dim} -> {a.in_dims[0]}")
        self.outer_strict = a.causality[0] is S
        cls = (S,) * b.n_slots if self.outer_strict else b.causality
        super().__init__(b.in_dims, a.out_dim, cls)
        self.a = a
        self.b = b
        self.prev = None

    def _reset(self):
        self.a.reset()
        self.b.reset()
        self.prev = None

    def _step(self, *xs):
        if not self.outer_strict:
            return self.a.step(self.b.step(*xs))
        # b runs one step behind: its causal slots get r_t = x_{t-1}, strict ones x_{t-2}
        if self.t == 0:
            self.prev = [np.zeros(np.shape(ad.value_of(x))) for x in xs]
            return self.a.step(_zeros(xs[0], self.b.out_dim))
        args = [x if c is C else p for x, p, c in zip(xs, self.prev, self.b.causality)]
        self.prev = list(xs)
        return self.a.step(self.b.step(*args))


def compose(a: CausalOperator, b: CausalOperator) -> Compose:
    return Compose(a, b)


def op_sum(a: CausalOperator, b: CausalOperator) -> Sum:
    return Sum(a, b)


def op_neg(a: CausalOperator) -> Scaled:
    return Scaled(a, -1.0)


def check_feedthrough(upsilon: CausalOperator, trials: int = 3, horizon: int = 4, seed: int = 0,
                      tol: float = 1e-12) -> bool:
    """Perturbation probe: does ``upsilon - I`` ignore the current input?"""
    if upsilon.n_slots != 1 or upsilon.in_dims[0] != upsilon.out_dim or upsilon.causality[0] is not C:
        return False
    rng = np.random.default_rng(seed)
    n = upsilon.out_dim
    for _ in range(trials):
        probe = upsilon.clone().reset()
        for _ in range(int(rng.integers(0, horizon + 1))):
            probe.step(rng.normal(size=n))
        x1, x2 = rng.normal(size=n), rng.normal(size=n)
        o1 = np.asarray(probe.clone().step(x1)) - x1
        o2 = np.asarray(probe.clone().step(x2)) - x2
        if np.max(np.abs(o1 - o2)) > tol * (1.0 + np.max(np.abs(o1))):
            return False
    return True


def invert_feedthrough(upsilon: CausalOperator, a, check: bool = True) -> np.ndarray:
    """Solve ``upsilon(b) = a`` for ``b`` when ``upsilon - I`` is strictly causal.

    Recursion ``b_t = a_t - upsilon°_t(b_{t-1:0})`` where the strict part is
    read off a clone stepped with a zero current input.
    """
    if check and not check_feedthrough(upsilon):
        raise CausalityError("upsilon - I is not strictly causal")
    a = np.asarray(a, dtype=float)
    op = upsilon.clone().reset()
    out = []
    for t in range(a.shape[0]):
        strict_part = np.asarray(op.clone().step(np.zeros_like(a[t])))
        b = a[t] - strict_part
        op.step(b)
        out.append(b)
    return np.stack(out)


def invert_two_port(psi: CausalOperator, y, u, r: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(v; d)`` from ``(y; u) = psi(v; d)``.

    ``psi`` is a two-slot causal operator whose stacked output is ``(y; u)``
    with ``y = v + Psi^y°(v, d)`` (strict in both) and
    ``u = d + Psi^u°(v, d)`` (causal in v, strict in d).
    """
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if psi.n_slots != 2:
        raise DimensionError("two-port operator expected")
    r = y.shape[-1] if r is None else r
    op = psi.clone().reset()
    vs, ds = [], []
    for t in range(y.shape[0]):
        zv = np.zeros_like(y[t])
        zd = np.zeros_like(u[t])
        yo = np.asarray(op.clone().step(zv, zd))[..., :r]
        v = y[t] - yo
        uo = np.asarray(op.clone().step(v, zd))[..., r:]
        d = u[t] - uo
        op.step(v, d)
        vs.append(v)
        ds.append(d)
    return np.stack(vs), np.stack(ds)


def causality_violations(op: CausalOperator, horizon: int = 8, trials: int = 4, seed: int = 0,
                         tol: float = 0.0) -> list[tuple[int, int]]:
    """Randomized perturbation probe of declared strict slots.

    Returns ``(slot, t)`` pairs where changing ``x_t`` moved output ``t``.
    """
    rng = np.random.default_rng(seed)
    bad = []
    for slot, c in enumerate(op.causality):
        if c is not S:
            continue
        for _ in range(trials):
            xs = [rng.normal(size=(horizon + 1, d)) for d in op.in_dims]
            t0 = int(rng.integers(0, horizon + 1))
            base = evaluate(op, *xs)
            xs[slot] = xs[slot].copy()
            xs[slot][t0] += rng.normal(size=op.in_dims[slot])
            pert = evaluate(op, *xs)
            if np.max(np.abs(base[:t0 + 1] - pert[:t0 + 1])) > tol:
                bad.append((slot, t0))
    return bad

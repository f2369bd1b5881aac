"""Finite-horizon sequences, norms and empirical stability certificates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .operators import CausalOperator

DEFAULT_T_MAX = 200
EXP_FIT_FLOOR = 1e-14


class Sequence:
    """Truncation ``x_0 .. x_T`` of a vector-valued signal.

    Stored as a read-only ``(T+1, n)`` float array.  The inclusive window
    ``x_{j:i}`` is :meth:`window`; plain ``x[t]`` returns the vector at time ``t``.
    """

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"sequence values must be 2-D (T+1, n), got shape {arr.shape}")
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def zeros(cls, horizon: int, dim: int) -> "Sequence":
        return cls(np.zeros((horizon + 1, dim)))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def horizon(self) -> int:
        return self._values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self._values.shape[1]

    def __len__(self) -> int:
        return self._values.shape[0]

    def __getitem__(self, t):
        return self._values[t]

    def __array__(self, dtype=None, copy=None):
        return self._values if dtype is None else self._values.astype(dtype)

    def __eq__(self, other) -> bool:
        return isinstance(other, Sequence) and np.array_equal(self._values, other._values)

    def __repr__(self) -> str:
        return f"Sequence(T={self.horizon}, n={self.dim})"

    def window(self, j: int, i: int) -> np.ndarray:
        """``x_{j:i}`` with ``j >= i`` in time order ``x_i .. x_j``; empty when ``j < i``."""
        if j < i:
            return np.zeros((0, self.dim))
        return self._values[i:j + 1]

    def to_csv(self, path: str | Path) -> None:
        write_sequence_csv(path, self._values)

    @classmethod
    def from_csv(cls, path: str | Path) -> "Sequence":
        return cls(read_sequence_csv(path))


@dataclass(frozen=True)
class SignalPair:
    """Element-wise concatenation ``(x; y)`` of two sequences."""

    first: Sequence
    second: Sequence

    def __post_init__(self):
        if self.first.horizon != self.second.horizon:
            raise ValueError("signal pair needs equal horizons")

    @property
    def horizon(self) -> int:
        return self.first.horizon

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.first.values, self.second.values], axis=1)


def concat(x, y) -> np.ndarray:
    """Stack two truncations side by side, zero-padding the shorter one in time."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = max(x.shape[0], y.shape[0])
    xp = np.zeros((n, x.shape[1]))
    yp = np.zeros((n, y.shape[1]))
    xp[:x.shape[0]] = x
    yp[:y.shape[0]] = y
    return np.concatenate([xp, yp], axis=1)


def _as_2d(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def lp_norm(x, p: float = 2) -> float:
    """Truncated p-norm with the Euclidean norm on each vector."""
    if p == 0 or (p != math.inf and p < 1):
        raise ValueError("p must be >= 1 or infinity")
    arr = _as_2d(x)
    if arr.shape[0] == 0:
        return 0.0
    mags = np.linalg.norm(arr, axis=1)
    if p == math.inf:
        return float(mags.max())
    return float(np.sum(mags ** p) ** (1.0 / p))


def tail_energy_ratio(x, start: int | None = None, p: float = 2) -> float:
    """``(norm of x_{T:start})^p / (norm of x)^p``; start defaults to ``T // 2``."""
    arr = _as_2d(x)
    if start is None:
        start = (arr.shape[0] - 1) // 2
    total = lp_norm(arr, p) ** p
    if total == 0.0:
        return 0.0
    return float(lp_norm(arr[start:], p) ** p / total)


@dataclass(frozen=True)
class ExpFit:
    k: float
    alpha: float
    degenerate: bool = False

    def __iter__(self):
        yield self.k
        yield self.alpha


def fit_exponential_rate(x) -> ExpFit:
    """Least-squares fit of ``log|x_t| = log k + t log alpha`` over non-negligible entries."""
    arr = _as_2d(x)
    mags = np.linalg.norm(arr, axis=1)
    t = np.arange(len(mags), dtype=float)
    keep = mags > EXP_FIT_FLOOR
    if not np.any(keep):
        return ExpFit(0.0, 0.0, degenerate=True)
    if len(mags) < 11 or keep.sum() < 5:
        raise ValueError("exponential fit needs horizon >= 10 and at least 5 nonzero entries")
    slope, intercept = np.polyfit(t[keep], np.log(mags[keep]), 1)
    return ExpFit(float(np.exp(intercept)), float(np.exp(slope)))


@dataclass(frozen=True)
class StabilityReport:
    lp_norm: float
    tail_energy_ratio: float
    exp_rate: float | None = None
    exp_gain: float | None = None

    @property
    def decaying(self) -> bool:
        return self.exp_rate is not None and self.exp_rate < 1.0


def stability_report(x, p: float = 2, tail_start: int | None = None) -> StabilityReport:
    arr = _as_2d(x)
    rate = gain = None
    mags = np.linalg.norm(arr, axis=1)
    if len(mags) >= 11 and (mags > EXP_FIT_FLOOR).sum() >= 5:
        fit = fit_exponential_rate(arr)
        rate, gain = fit.alpha, fit.k
    return StabilityReport(lp_norm(arr, p), tail_energy_ratio(arr, tail_start, p), rate, gain)


def probe_pair(rng: np.random.Generator, horizon: int, dim: int, kind: str | None = None):
    """Two input sequences differing by a structured perturbation.

    Perturbation families: white noise, a sinusoid at a random frequency,
    a constant step, and a random walk.  Low-frequency families matter for
    low-pass operators, where white noise alone underestimates the gain.
    """
    kinds = ("white", "sine", "step", "walk")
    if kind is None:
        kind = kinds[rng.integers(len(kinds))]
    base = rng.normal(size=(horizon + 1, dim))
    t = np.arange(horizon + 1)[:, None]
    if kind == "white":
        delta = rng.normal(size=(horizon + 1, dim))
    elif kind == "sine":
        w = rng.uniform(0.0, np.pi) * rng.uniform() ** 2
        delta = np.cos(w * t + rng.uniform(0, 2 * np.pi, size=dim)) * rng.normal(size=dim)
    elif kind == "step":
        delta = np.ones((horizon + 1, 1)) * rng.normal(size=dim)
    elif kind == "walk":
        delta = np.cumsum(rng.normal(size=(horizon + 1, dim)), axis=0) / np.sqrt(horizon + 1)
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    scale = rng.uniform(0.1, 2.0)
    return base, base + scale * delta


def estimate_incremental_gain(op: "CausalOperator", p: float = 2, n_pairs: int = 20, seed: int = 0,
                              horizon: int = DEFAULT_T_MAX, kinds: Iterable[str] | None = None) -> float:
    """Largest observed ``|op x1 - op x2|_p / |x1 - x2|_p`` over random probe pairs.

    A lower bound on the true incremental gain.
    """
    from .operators import evaluate

    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    kinds = list(kinds) if kinds is not None else None
    dim = op.in_dims[0]
    best = 0.0
    for i in range(n_pairs):
        kind = kinds[i % len(kinds)] if kinds else None
        x1, x2 = probe_pair(rng, horizon, dim, kind)
        den = lp_norm(x1 - x2, p)
        if den == 0.0:
            continue
        num = lp_norm(evaluate(op, x1) - evaluate(op, x2), p)
        best = max(best, num / den)
    return best


def write_sequence_csv(path: str | Path, values, t0: int = 0) -> None:
    arr = _as_2d(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(arr.shape[1])])
        for k, row in enumerate(arr):
            w.writerow([t0 + k] + [repr(float(v)) for v in row])


def read_sequence_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ValueError("sequence CSV must start with a 't' column")
    return np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(len(body), len(header) - 1)

"""Seeded random operators for tests and verification suites.

All state maps are contractive (``tanh`` of a map with spectral norm below
``rho < 1``), so every operator here is exponentially stable with finite
incremental gain.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .operators import C, S, StepOperator
from .plants import LtiPlant


def _scaled(rng: np.random.Generator, rows: int, cols: int, norm: float) -> np.ndarray:
    a = rng.normal(size=(rows, cols))
    s = np.linalg.norm(a, 2)
    return a * (norm / s) if s > 0 else a


def random_strict_operator(in_dim: int, out_dim: int, seed: int = 0, n: int = 3, rho: float = 0.6,
                           gain: float = 1.0, nonlinear: bool = True) -> StepOperator:
    """``x_{t+1} = σ(A x_t + B u_t)``, ``y_t = C x_t + c`` with ``x_0 = 0``."""
    rng = np.random.default_rng(seed)
    A = _scaled(rng, n, n, rho)
    B = rng.normal(size=(n, in_dim))
    Cm = gain * _scaled(rng, out_dim, n, 1.0)
    c = 0.1 * rng.normal(size=out_dim)
    act = ad.tanh if nonlinear else (lambda z: z)

    def fn(t, x, u_prev):
        if t > 0:
            x = act(ad.add(ad.matmul(x, A.T), ad.matmul(u_prev, B.T)))
        return ad.add(ad.matmul(x, Cm.T), c), x

    return StepOperator(fn, np.zeros(n), (in_dim,), out_dim, (S,), name="rand_strict")


def random_causal_operator(in_dim: int, out_dim: int, seed: int = 0, n: int = 3, rho: float = 0.6,
                           gain: float = 1.0) -> StepOperator:
    """Like :func:`random_strict_operator` plus a static ``tanh`` feedthrough."""
    rng = np.random.default_rng(seed)
    A = _scaled(rng, n, n, rho)
    B = rng.normal(size=(n, in_dim))
    Cm = gain * _scaled(rng, out_dim, n, 0.5)
    D = gain * _scaled(rng, out_dim, in_dim, 0.5)

    def fn(t, x, u):
        y = ad.add(ad.matmul(x, Cm.T), ad.matmul(ad.tanh(u), D.T))
        return y, ad.tanh(ad.add(ad.matmul(x, A.T), ad.matmul(u, B.T)))

    return StepOperator(fn, np.zeros(n), (in_dim,), out_dim, (C,), name="rand_causal")


def random_two_port(in_dims: tuple[int, int], out_dim: int, seed: int = 0, n: int = 3, rho: float = 0.6,
                    gain: float = 1.0, strict_first: bool = False) -> StepOperator:
    """Random member of the class causal in slot 1 and strictly causal in slot 2.

    With ``strict_first`` both slots are strictly causal.
    """
    rng = np.random.default_rng(seed)
    a_dim, b_dim = in_dims
    A = _scaled(rng, n, n, rho)
    Ba = rng.normal(size=(n, a_dim))
    Bb = rng.normal(size=(n, b_dim))
    Cm = gain * _scaled(rng, out_dim, n, 0.5)
    Da = gain * _scaled(rng, out_dim, a_dim, 0.3)
    Db = gain * _scaled(rng, out_dim, b_dim, 0.3)
    first = S if strict_first else C

    def fn(t, x, a, b_prev):
        y = ad.add(ad.add(ad.matmul(x, Cm.T), ad.matmul(ad.tanh(a), Da.T)), ad.matmul(ad.tanh(b_prev), Db.T))
        return y, ad.tanh(ad.add(ad.add(ad.matmul(x, A.T), ad.matmul(a, Ba.T)), ad.matmul(b_prev, Bb.T)))

    return StepOperator(fn, np.zeros(n), in_dims, out_dim, (first, S), name="rand_two_port")


def random_stable_lti(n: int, m: int, r: int, seed: int = 0, rho: float = 0.7) -> LtiPlant:
    rng = np.random.default_rng(seed)
    A = _scaled(rng, n, n, rho)
    return LtiPlant(A, rng.normal(size=(n, m)), rng.normal(size=(r, n)))


def random_adjacency(size: int, density: float = 0.4, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = (rng.uniform(size=(size, size)) < density).astype(int)
    np.fill_diagonal(a, 1)
    return a

"""Closed-loop simulation, closed-loop maps and their construction from a free operator M.

Loop equations::

    y_t = G_t(u_{t-1:0}) + v_t
    u_t = K_t(y_{t:0}) + d_t

A controller with two slots ``(y, u_prev)`` is also accepted; its second slot
must be strictly causal and receives the realized input ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .operators import C, S, CausalOperator, CausalityError, DimensionError, HorizonError, evaluate
from .signals import DEFAULT_T_MAX


def _check_plant(g: CausalOperator) -> None:
    if g.n_slots != 1 or g.causality[0] is not S:
        raise CausalityError("plant must be a single-slot strictly causal operator")


def _check_controller(k: CausalOperator) -> None:
    if k.n_slots == 1:
        return
    if k.n_slots == 2 and k.causality[1] is S:
        return
    raise CausalityError("controller must be causal in y and strictly causal in the input slot")


def _check_m(m: CausalOperator) -> None:
    if m.n_slots != 2 or m.causality[1] is not S:
        raise CausalityError("M must be causal in its first slot and strictly causal in its second")


def simulate_closed_loop(g: CausalOperator, k: CausalOperator, v, d) -> tuple[np.ndarray, np.ndarray]:
    """Interleaved recursion: ``y_t`` from past inputs, then ``u_t`` from outputs up to ``t``."""
    _check_plant(g)
    _check_controller(k)
    v = np.asarray(v, dtype=float)
    d = np.asarray(d, dtype=float)
    if v.shape[0] != d.shape[0]:
        raise DimensionError("v and d need the same horizon")
    if v.shape[-1] != g.out_dim or d.shape[-1] != g.in_dims[0]:
        raise DimensionError("disturbance dimensions do not match the plant")
    g.reset()
    k.reset()
    ys, us = [], []
    u_prev = np.zeros_like(d[0])
    for t in range(v.shape[0]):
        y = np.asarray(g.step(u_prev)) + v[t]
        uo = k.step(y) if k.n_slots == 1 else k.step(y, u_prev)
        u = np.asarray(uo) + d[t]
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(u))):
            raise FloatingPointError(f"closed loop produced a non-finite value at t={t}")
        ys.append(y)
        us.append(u)
        u_prev = u
    return np.stack(ys), np.stack(us)


class ClosedLoopOperator(CausalOperator):
    """``Φ``: two-port ``(v_t, d_t) -> (y_t; u_t)`` for the loop (G, K)."""

    def __init__(self, g: CausalOperator, k: CausalOperator):
        _check_plant(g)
        _check_controller(k)
        self.r, self.m = g.out_dim, g.in_dims[0]
        super().__init__((self.r, self.m), self.r + self.m, (C, C))
        self.g = g.clone()
        self.k = k.clone()
        self.u_prev = None

    def _reset(self):
        self.g.reset()
        self.k.reset()
        self.u_prev = None

    def _step(self, v, d):
        u_prev = np.zeros(np.shape(ad.value_of(d))) if self.u_prev is None else self.u_prev
        y = ad.add(self.g.step(u_prev), v)
        uo = self.k.step(y) if self.k.n_slots == 1 else self.k.step(y, u_prev)
        u = ad.add(uo, d)
        self.u_prev = u
        return ad.concatenate([y, u], axis=-1)


class ClosedLoopUo(CausalOperator):
    """``Φ^{u°}``: ``(v_t, d_{t-1}) -> u°_t``, causal in v and strictly causal in d."""

    def __init__(self, g: CausalOperator, k: CausalOperator):
        _check_plant(g)
        _check_controller(k)
        r, m = g.out_dim, g.in_dims[0]
        super().__init__((r, m), m, (C, S))
        self.g = g.clone()
        self.k = k.clone()
        self.uo_prev = None

    def _reset(self):
        self.g.reset()
        self.k.reset()
        self.uo_prev = None

    def _step(self, v, d_prev):
        if self.uo_prev is None:
            u_prev = np.zeros(np.shape(ad.value_of(d_prev)))
        else:
            u_prev = ad.add(self.uo_prev, d_prev)
        y = ad.add(self.g.step(u_prev), v)
        uo = self.k.step(y) if self.k.n_slots == 1 else self.k.step(y, u_prev)
        self.uo_prev = uo
        return uo


@dataclass
class ClosedLoopMap:
    """Pair of closed-loop maps ``(Ψ^y; Ψ^u)`` stored as the two-port ``psi``.

    ``psi_uo`` is ``Ψ^{u°} = Ψ^u - [0 I]``, causal in v and strictly causal in d.
    """

    psi: CausalOperator
    psi_uo: CausalOperator
    plant: CausalOperator

    @property
    def r(self) -> int:
        return self.plant.out_dim

    @property
    def m(self) -> int:
        return self.plant.in_dims[0]

    def __call__(self, v, d) -> tuple[np.ndarray, np.ndarray]:
        out = evaluate(self.psi, v, d)
        return out[..., :self.r], out[..., self.r:]

    def psi_y_o(self, v, d) -> np.ndarray:
        """``Ψ^{y°}(v; d) = Ψ^y(v; d) - v``."""
        return self(v, d)[0] - np.asarray(v, dtype=float)

    def psi_u_o(self, v, d) -> np.ndarray:
        return evaluate(self.psi_uo, v, d)


def extract_phi(g: CausalOperator, k: CausalOperator) -> ClosedLoopMap:
    return ClosedLoopMap(ClosedLoopOperator(g, k), ClosedLoopUo(g, k), g.clone())


class _MRecursion:
    """Shared state of the (β, δ) recursion driven by ``(v_t, d_{t-1})``."""

    def __init__(self, g: CausalOperator, m: CausalOperator):
        self.g_drive = g.clone()
        self.g_free = g.clone()
        self.m = m.clone()
        self.reset()

    def reset(self):
        self.g_drive.reset()
        self.g_free.reset()
        self.m.reset()
        self.delta_prev = None

    def step(self, v, d_prev):
        zeros_u = np.zeros(np.shape(ad.value_of(d_prev)))
        if self.delta_prev is None:
            drive = zeros_u
            delta_prev = zeros_u
        else:
            drive = ad.sub(d_prev, self.delta_prev)
            delta_prev = self.delta_prev
        gy = self.g_drive.step(drive)
        gfree = self.g_free.step(zeros_u)
        y = ad.add(v, gy)
        beta = ad.sub(y, gfree)
        delta = ad.neg(self.m.step(beta, delta_prev))
        self.delta_prev = delta
        return y, beta, delta


class PsiFromM(CausalOperator):
    """Two-port ``(v_t, d_t) -> (y_t; u_t)`` with ``u = d - δ`` and ``y = v + G(d - δ)``."""

    def __init__(self, g: CausalOperator, m: CausalOperator):
        _check_plant(g)
        _check_m(m)
        self.r, self.mdim = g.out_dim, g.in_dims[0]
        super().__init__((self.r, self.mdim), self.r + self.mdim, (C, C))
        self.rec = _MRecursion(g, m)
        self.d_prev = None

    def _reset(self):
        self.rec.reset()
        self.d_prev = None

    def _step(self, v, d):
        d_prev = np.zeros(np.shape(ad.value_of(d))) if self.d_prev is None else self.d_prev
        y, _, delta = self.rec.step(v, d_prev)
        self.d_prev = d
        return ad.concatenate([y, ad.sub(d, delta)], axis=-1)


class PsiUoFromM(CausalOperator):
    """``Ψ^{u°} = -δ`` as a function of ``(v_t, d_{t-1})``."""

    def __init__(self, g: CausalOperator, m: CausalOperator):
        _check_plant(g)
        _check_m(m)
        super().__init__((g.out_dim, g.in_dims[0]), g.in_dims[0], (C, S))
        self.rec = _MRecursion(g, m)

    def _reset(self):
        self.rec.reset()

    def _step(self, v, d_prev):
        return ad.neg(self.rec.step(v, d_prev)[2])


class SMap(CausalOperator):
    """``(v; d) -> (β; δ)`` defined by the coupled recursion."""

    def __init__(self, g: CausalOperator, m: CausalOperator):
        _check_plant(g)
        _check_m(m)
        self.r, self.mdim = g.out_dim, g.in_dims[0]
        super().__init__((self.r, self.mdim), self.r + self.mdim, (C, S))
        self.rec = _MRecursion(g, m)

    def _reset(self):
        self.rec.reset()

    def _step(self, v, d_prev):
        _, beta, delta = self.rec.step(v, d_prev)
        return ad.concatenate([beta, delta], axis=-1)


def build_psi_from_m(g: CausalOperator, m: CausalOperator) -> ClosedLoopMap:
    """Closed-loop maps achieved by the controller whose free operator is ``m``."""
    return ClosedLoopMap(PsiFromM(g, m), PsiUoFromM(g, m), g.clone())


class MController(CausalOperator):
    """``u°_t = M_t(y_{t:0} - y^free_{t:0}; -u°_{t-1:0})`` with an internal plant copy."""

    def __init__(self, g: CausalOperator, m: CausalOperator, t_max: int = DEFAULT_T_MAX):
        _check_plant(g)
        _check_m(m)
        super().__init__((g.out_dim,), g.in_dims[0], (C,))
        self.g_free = g.clone()
        self.m = m.clone()
        self.t_max = t_max
        self.uo_prev = None

    def _reset(self):
        self.g_free.reset()
        self.m.reset()
        self.uo_prev = None

    def _step(self, y):
        if self.t > self.t_max:
            raise HorizonError(f"controller history exceeds t_max={self.t_max}")
        zeros_u = np.zeros(np.shape(ad.value_of(y))[:-1] + (self.out_dim,))
        yfree = self.g_free.step(zeros_u)
        beta = ad.sub(y, yfree)
        delta_prev = zeros_u if self.uo_prev is None else ad.neg(self.uo_prev)
        uo = self.m.step(beta, delta_prev)
        self.uo_prev = uo
        return uo


def controller_from_m(g: CausalOperator, m: CausalOperator, t_max: int = DEFAULT_T_MAX) -> MController:
    return MController(g, m, t_max)

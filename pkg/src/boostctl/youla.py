"""Controllers parametrized by a free stable operator: IMC, boosted base controller,
measured-disturbance form, plus the small-gain robustness test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .operators import (C, S, CausalOperator, CausalityError, Compose, HorizonError, Identity,
                        Scaled, Sum, evaluate, invert_feedthrough)
from .signals import DEFAULT_T_MAX, estimate_incremental_gain, tail_energy_ratio


def _check_plant(g: CausalOperator) -> None:
    if g.n_slots != 1 or g.causality[0] is not S:
        raise CausalityError("plant model must be single-slot and strictly causal")


class _Recorder:
    def __init__(self, record: bool):
        self.record = record
        self.history: dict[str, list] = {}

    def __call__(self, name: str, value) -> None:
        if self.record:
            self.history.setdefault(name, []).append(value)

    def clear(self) -> None:
        self.history = {}


class ImcController(CausalOperator):
    """``ω_t = y_t - G_t(u°_{t-1:0})``, ``u°_t = Q_t(ω_{t:0})``.

    The internal model is fed the controller's own past outputs.
    """

    def __init__(self, g: CausalOperator, q: CausalOperator, t_max: int = DEFAULT_T_MAX, record: bool = True,
                 clone: bool = True):
        _check_plant(g)
        if q.n_slots != 1 or q.causality[0] is not C:
            raise CausalityError("Q must be a single-slot causal operator")
        super().__init__((g.out_dim,), g.in_dims[0], (C,))
        # clone=False keeps tape variables inside q attached to the active tape
        self.model = g.clone()
        self.q = q.clone() if clone else q
        self.t_max = t_max
        self.log = _Recorder(record)
        self.uo_prev = None

    def _reset(self):
        self.model.reset()
        self.q.reset()
        self.log.clear()
        self.uo_prev = None

    def _model_input(self, y):
        if self.uo_prev is None:
            return np.zeros(np.shape(ad.value_of(y))[:-1] + (self.out_dim,))
        return self.uo_prev

    def _step(self, y):
        if self.t > self.t_max:
            raise HorizonError(f"controller history exceeds t_max={self.t_max}")
        omega = ad.sub(y, self.model.step(self._model_input(y)))
        uo = self.q.step(omega)
        self.log("omega", omega)
        self.uo_prev = uo
        return uo

    @property
    def omega(self) -> np.ndarray:
        return np.stack([ad.value_of(w) for w in self.log.history.get("omega", [])])


class BoostController(ImcController):
    """``ω̃_t = y_t - G_t(u°_{t-1:0})``, ``u°_t = Q_t(ω̃_{t:0}) + K'_t(y_{t:0})``."""

    def __init__(self, g: CausalOperator, q: CausalOperator, k_base: CausalOperator | None = None,
                 t_max: int = DEFAULT_T_MAX, record: bool = True, clone: bool = True):
        super().__init__(g, q, t_max, record, clone)
        if k_base is not None and (k_base.n_slots != 1 or k_base.out_dim != self.out_dim):
            raise CausalityError("base controller must map y to u")
        self.k_base = None if k_base is None else k_base.clone()

    def _reset(self):
        super()._reset()
        if self.k_base is not None:
            self.k_base.reset()

    def _step(self, y):
        if self.t > self.t_max:
            raise HorizonError(f"controller history exceeds t_max={self.t_max}")
        omega = ad.sub(y, self.model.step(self._model_input(y)))
        uo = self.q.step(omega)
        if self.k_base is not None:
            uo = ad.add(uo, self.k_base.step(y))
        self.log("omega", omega)
        self.uo_prev = uo
        return uo


class MeasuredDistController(CausalOperator):
    """Controller for measured input disturbances.

    Slots ``(y_t, u_{t-1})``.  Reconstructs ``δ_{t-1} = u_{t-1} - u°_{t-1}`` and
    ``β_t = y_t - G_t(u_{t-1:0})`` online, then ``u°_t = Ψ^{u°}_t(β_{t:0}, δ_{t-1:0})``.
    """

    def __init__(self, g: CausalOperator, psi_uo: CausalOperator, t_max: int = DEFAULT_T_MAX,
                 record: bool = True, clone: bool = True):
        _check_plant(g)
        if psi_uo.n_slots != 2 or psi_uo.causality[1] is not S:
            raise CausalityError("Ψ^{u°} must be causal in β and strictly causal in δ")
        super().__init__((g.out_dim, g.in_dims[0]), g.in_dims[0], (C, S))
        self.model = g.clone()
        self.psi = psi_uo.clone() if clone else psi_uo
        self.t_max = t_max
        self.log = _Recorder(record)
        self.uo_prev = None

    def _reset(self):
        self.model.reset()
        self.psi.reset()
        self.log.clear()
        self.uo_prev = None

    def _step(self, y, u_prev):
        if self.t > self.t_max:
            raise HorizonError(f"controller history exceeds t_max={self.t_max}")
        if self.uo_prev is None:
            delta_prev = np.zeros(np.shape(ad.value_of(u_prev)))
        else:
            delta_prev = ad.sub(u_prev, self.uo_prev)
            self.log("delta", delta_prev)
        beta = ad.sub(y, self.model.step(u_prev))
        uo = self.psi.step(beta, delta_prev)
        self.log("beta", beta)
        self.uo_prev = uo
        return uo


def imc_step(c: ImcController, y_t):
    return c.step(y_t)


def boost_step(c: BoostController, y_t):
    return c.step(y_t)


def measured_dist_step(c: MeasuredDistController, y_t, u_prev):
    return c.step(y_t, u_prev)


def youla_controller_via_inversion(g: CausalOperator, q: CausalOperator, y) -> np.ndarray:
    """Evaluate ``K = Q (GQ + I)^{-1}`` on ``y`` by inverting ``GQ + I`` recursively."""
    upsilon = Sum(Identity(g.out_dim), Compose(g.clone(), q.clone()))
    omega = invert_feedthrough(upsilon, y)
    return evaluate(q.clone(), omega)


@dataclass(frozen=True)
class RobustnessBudget:
    gamma_delta: float
    gamma_q: float
    admissible: bool
    unconditional: bool
    tail_ratios: tuple[float, ...] = ()

    @property
    def q_bound(self) -> float:
        return np.inf if self.gamma_delta == 0 else 1.0 / self.gamma_delta


def robustness_check(g_true: CausalOperator, g_model: CausalOperator, q_gain: float, probes: int = 20,
                     horizon: int = DEFAULT_T_MAX, seed: int = 0, tail_tol: float = 0.05) -> RobustnessBudget:
    """Small-gain test for plant mismatch ``Δ = G̃ - G``.

    ``gamma_delta`` is an empirical (lower-bound) incremental gain of ``Δ``.
    ``unconditional`` is the empirical check that ``Δu`` lies in ℓ2 for
    bounded non-decaying probes, in which case any stable Q is admissible.
    """
    _check_plant(g_true)
    _check_plant(g_model)
    delta = Sum(g_true.clone(), Scaled(g_model.clone(), -1.0))
    gamma_delta = estimate_incremental_gain(delta, p=2, n_pairs=probes, seed=seed, horizon=horizon,
                                            kinds=("sine", "step", "walk", "white"))
    rng = np.random.default_rng(seed + 1)
    ratios = []
    for _ in range(probes):
        u = rng.normal(size=(horizon + 1, g_true.in_dims[0]))
        diff = evaluate(delta, u)
        ratios.append(tail_energy_ratio(diff))
    unconditional = bool(max(ratios) < tail_tol)
    admissible = unconditional or q_gain * gamma_delta < 1.0
    return RobustnessBudget(float(gamma_delta), float(q_gain), bool(admissible), unconditional, tuple(ratios))

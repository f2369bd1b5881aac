"""Strictly causal plant operators: state-space, LTI and the planar robot fleet."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .operators import S, CausalOperator, StaticMap


class NonFiniteStateError(FloatingPointError):
    pass


class PlantOperator(CausalOperator):
    """Operator induced by ``x_{t+1} = f(x_t, u_t)``, ``y_t = h(x_t)``, ``x_0 = x̄``.

    Strictly causal: at step ``t`` it receives ``u_{t-1}`` and returns
    ``h(x_t)``; ``G_0(∅) = h(x̄)``.
    """

    def __init__(self, f: Callable, h: Callable, x0, n: int, m: int, r: int):
        super().__init__((m,), r, (S,))
        self.f = f
        self.h = h
        self.x0 = np.asarray(x0, dtype=float)
        self.n = n
        self.x = self.x0

    def _reset(self):
        self.x = self.x0

    def _step(self, u_prev):
        if self.t > 0:
            self.x = self.f(self.x, u_prev)
        return self.h(self.x)

    def initial_output(self):
        return self.h(self.x0)


@dataclass
class StateSpacePlant:
    f: Callable
    h: Callable
    x0: np.ndarray
    n: int
    m: int
    r: int

    def operator(self, x0=None) -> PlantOperator:
        return PlantOperator(self.f, self.h, self.x0 if x0 is None else x0, self.n, self.m, self.r)


def plant_operator(p: StateSpacePlant, x0=None) -> PlantOperator:
    return p.operator(x0)


@dataclass
class LtiPlant:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = self.A.shape[0]
        self.x0 = np.zeros(n) if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(n)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.A.shape[0], self.B.shape[1], self.C.shape[0]

    def as_state_space(self) -> StateSpacePlant:
        A, B, Cm = self.A, self.B, self.C
        n, m, r = self.dims
        return StateSpacePlant(lambda x, u: ad.add(ad.matmul(x, A.T), ad.matmul(u, B.T)),
                               lambda x: ad.matmul(x, Cm.T), self.x0, n, m, r)

    def operator(self, x0=None) -> PlantOperator:
        return self.as_state_space().operator(x0)


def lti_toeplitz(p: LtiPlant, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Block lower-triangular map of ``u_{0:T}`` and the free response stack.

    Block ``(i, j)`` is ``C A^{i-j-1} B`` for ``i > j`` and zero otherwise, so
    ``y = M u + (C; CA; CA^2; ...) x̄``.
    """
    if T < 0:
        raise ValueError("horizon must be >= 0")
    n, m, r = p.dims
    mat = np.zeros(((T + 1) * r, (T + 1) * m))
    markov = []
    Ak = np.eye(n)
    for _ in range(T):
        markov.append(p.C @ Ak @ p.B)
        Ak = Ak @ p.A
    for i in range(T + 1):
        for j in range(i):
            mat[i * r:(i + 1) * r, j * m:(j + 1) * m] = markov[i - j - 1]
    free = np.zeros((T + 1) * r)
    Ak = np.eye(n)
    for i in range(T + 1):
        free[i * r:(i + 1) * r] = p.C @ Ak @ p.x0
        Ak = Ak @ p.A
    return mat, free


@dataclass
class RobotFleet:
    """Point-mass robots with nonlinear drag and a proportional base controller."""

    start: np.ndarray
    targets: np.ndarray
    mass: np.ndarray | float = 1.0
    b1: np.ndarray | float = 2.0
    b2: np.ndarray | float = 0.5
    k1: np.ndarray | float = 1.0
    k2: np.ndarray | float = 1.0
    ts: float = 0.05

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(-1, 2)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 2)
        n = self.start.shape[0]
        for name in ("mass", "b1", "b2", "k1", "k2"):
            setattr(self, name, np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy())
        if np.any(self.b2 <= 0) or np.any(self.b2 >= self.b1):
            raise ValueError("drag coefficients need 0 < b2 < b1")
        if np.any(self.k1 <= 0) or np.any(self.k2 <= 0):
            raise ValueError("base gains must be positive")

    @property
    def n_robots(self) -> int:
        return self.start.shape[0]

    @property
    def dim(self) -> int:
        """Dimension of y and u (two planar components per robot)."""
        return 2 * self.n_robots

    # per-component parameter vectors, ordered (x1, y1, x2, y2, ...)
    def _per_component(self, a: np.ndarray) -> np.ndarray:
        return np.repeat(a, 2)

    @property
    def gain_vector(self) -> np.ndarray:
        return np.stack([self.k1, self.k2], axis=1).reshape(-1)

    @property
    def target_vector(self) -> np.ndarray:
        return self.targets.reshape(-1)

    @property
    def start_vector(self) -> np.ndarray:
        return self.start.reshape(-1)

    def drag(self, vel):
        b1 = self._per_component(self.b1)
        b2 = self._per_component(self.b2)
        return ad.sub(ad.mul(b1, vel), ad.mul(b2, ad.tanh(vel)))

    def advance(self, pos, vel, force):
        """One explicit-Euler step on split position/velocity arrays."""
        m = self._per_component(self.mass)
        new_pos = ad.add(pos, ad.mul(self.ts, vel))
        acc = ad.div(ad.add(ad.neg(self.drag(vel)), force), m)
        new_vel = ad.add(vel, ad.mul(self.ts, acc))
        return new_pos, new_vel

    def base_force(self, pos):
        return ad.mul(self.gain_vector, ad.sub(self.target_vector, pos))

    def state_from_positions(self, pos, vel=None) -> np.ndarray:
        pos = np.asarray(pos, dtype=float)
        vel = np.zeros_like(pos) if vel is None else np.asarray(vel, dtype=float)
        lead = pos.shape[:-1]
        p = pos.reshape(lead + (self.n_robots, 2))
        v = vel.reshape(lead + (self.n_robots, 2))
        return np.concatenate([p, v], axis=-1).reshape(lead + (4 * self.n_robots,))


def _split_state(x: np.ndarray, n_robots: int):
    lead = x.shape[:-1]
    blocks = x.reshape(lead + (n_robots, 4))
    return blocks[..., :2].reshape(lead + (2 * n_robots,)), blocks[..., 2:].reshape(lead + (2 * n_robots,))


def robot_step(fleet: RobotFleet, x_t, F_t) -> np.ndarray:
    """Explicit-Euler update of the fleet state ``(p1, v1, p2, v2, ...)`` under force ``F``."""
    x_t = np.asarray(x_t, dtype=float)
    F_t = np.asarray(F_t, dtype=float)
    if x_t.shape[-1] != 4 * fleet.n_robots:
        raise ValueError(f"state needs {4 * fleet.n_robots} components")
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(F_t))):
        raise NonFiniteStateError("robot state or force is not finite")
    pos, vel = _split_state(x_t, fleet.n_robots)
    new_pos, new_vel = fleet.advance(pos, vel, F_t)
    out = fleet.state_from_positions(new_pos, new_vel)
    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError("robot state diverged")
    return out


def base_controller(fleet: RobotFleet) -> StaticMap:
    """``nu = K̄ (x̄ - y)`` applied robot-wise."""
    return StaticMap(fleet.base_force, fleet.dim, fleet.dim, name="base")


class FleetPlant(CausalOperator):
    """Robot fleet seen from the optimization input ``u``.

    With ``prestabilized=True`` the base loop is closed inside, so
    ``F = K̄(x̄ - y) + u``; the output is the stacked robot positions.
    Initial positions may carry a batch dimension; velocities start at zero.
    """

    def __init__(self, fleet: RobotFleet, start=None, prestabilized: bool = True):
        super().__init__((fleet.dim,), fleet.dim, (S,))
        self.fleet = fleet
        self.start = fleet.start_vector if start is None else np.asarray(start, dtype=float)
        self.prestabilized = prestabilized
        self._reset()

    def _reset(self):
        self.pos = self.start
        self.vel = np.zeros_like(self.start)

    def _step(self, u_prev):
        if self.t > 0:
            force = u_prev
            if self.prestabilized:
                force = ad.add(self.fleet.base_force(self.pos), u_prev)
            self.pos, self.vel = self.fleet.advance(self.pos, self.vel, force)
        return self.pos


def fleet_plant(fleet: RobotFleet, start=None, prestabilized: bool = True) -> FleetPlant:
    return FleetPlant(fleet, start, prestabilized)

"""Corridor stage cost, waypoint TLTL cost and disturbance samplers.

Trajectories are time-major: ``y`` has shape ``(T+1, ..., 2N)`` with robot
``i`` occupying columns ``2i, 2i+1``.  Every function accepts plain arrays or
tape variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

GOAL_RADIUS = 0.05


def _robot(y, i: int):
    return ad.getitem(y, (Ellipsis, slice(2 * i, 2 * i + 2)))


def _n_robots(y) -> int:
    return np.shape(ad.value_of(y))[-1] // 2


@dataclass
class CorridorLoss:
    targets: np.ndarray
    Q: np.ndarray = field(default_factory=lambda: np.eye(4))
    alpha_u: float = 2.5e-4
    alpha_ca: float = 100.0
    alpha_obs: float = 5e3
    r_agent: float = 0.25
    D: float | None = None
    eps: float = 0.05
    obstacles: np.ndarray = field(default_factory=lambda: np.array([[2.5, 0.0], [-2.5, 0.0], [1.5, 0.0], [-1.5, 0.0]]))
    sigma: np.ndarray = field(default_factory=lambda: 0.2 * np.eye(2))

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        self.Q = np.asarray(self.Q, dtype=float)
        self.obstacles = np.asarray(self.obstacles, dtype=float).reshape(-1, 2)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.D is None:
            self.D = 2.0 * self.r_agent

    @property
    def activation_distance(self) -> float:
        return float(self.D)


def gaussian_density(z, mu, sigma):
    """Bivariate normal density ``η(z; μ, Σ)`` evaluated along the last axis."""
    sigma = np.asarray(sigma, dtype=float)
    coef = 1.0 / (2.0 * np.pi * np.sqrt(np.linalg.det(sigma)))
    diff = ad.sub(z, mu)
    quad = ad.sum(ad.mul(ad.matmul(diff, np.linalg.inv(sigma)), diff), axis=-1)
    return ad.mul(coef, ad.exp(ad.mul(-0.5, quad)))


def corridor_terms(y, u, cfg: CorridorLoss) -> dict:
    """Per-time stage terms (each of shape ``(T+1, ...)``), already weighted."""
    e = ad.sub(y, cfg.targets)
    traj = ad.add(ad.sum(ad.mul(ad.matmul(e, cfg.Q), e), axis=-1),
                  ad.mul(cfg.alpha_u, ad.sum(ad.mul(u, u), axis=-1)))
    n = _n_robots(y)
    ca = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dist = ad.norm(ad.sub(_robot(y, i), _robot(y, j)), axis=-1)
            mask = (ad.value_of(dist) <= cfg.D).astype(float)
            ca = ad.add(ca, ad.mul(mask, ad.power(ad.add(dist, cfg.eps), -2.0)))
    obs = 0.0
    for i in range(n):
        for mu in cfg.obstacles:
            obs = ad.add(obs, gaussian_density(_robot(y, i), mu, cfg.sigma))
    return {"traj": traj, "ca": ad.mul(cfg.alpha_ca, ca), "obs": ad.mul(cfg.alpha_obs, obs)}


def corridor_loss(y, u, cfg: CorridorLoss):
    """``Σ_t l_traj + l_ca + l_obs``; one value per trajectory in the batch."""
    terms = corridor_terms(y, u, cfg)
    stage = ad.add(ad.add(terms["traj"], terms["ca"]), terms["obs"])
    out = ad.sum(stage, axis=0)
    return float(out) if not ad.is_var(out) and np.ndim(out) == 0 else out


@dataclass
class TltlSpec:
    """Per-robot ordered goals ``(g1, g2, g3)`` and the avoidance radii."""

    goals: np.ndarray                    # (N, 3, 2) in visiting order
    obstacles: np.ndarray = field(default_factory=lambda: np.array([[-2.0, 2.0], [2.0, 2.0]]))
    r_obs: float = 1.7
    r_rob: float = 0.5
    goal_radius: float = GOAL_RADIUS
    alpha_reg: float = 1e-4

    def __post_init__(self):
        self.goals = np.asarray(self.goals, dtype=float).reshape(-1, 3, 2)
        self.obstacles = np.asarray(self.obstacles, dtype=float).reshape(-1, 2)

    @property
    def final_targets(self) -> np.ndarray:
        return self.goals[:, 2, :].reshape(-1)


CONJUNCTS = ("sequence", "not_before_g1", "not_g3_before_g2", "no_revisit", "obstacles", "collision", "final_goal")


def _rev_cummin(a):
    rev = ad.getitem(a, slice(None, None, -1))
    return ad.getitem(ad.cummin(rev, axis=0), slice(None, None, -1))


def tltl_conjuncts(y, spec: TltlSpec) -> list[list]:
    """The seven robustness terms per robot, each reduced over time.

    Returns ``out[i][k]`` for robot ``i`` and conjunct ``k`` (order of
    :data:`CONJUNCTS`).  Positive values mean the conjunct holds.
    """
    T = np.shape(ad.value_of(y))[0] - 1
    if T < 2:
        raise ValueError("TLTL evaluation needs a horizon T >= 2")
    n = _n_robots(y)
    rg = spec.goal_radius
    result = []
    for i in range(n):
        p = _robot(y, i)
        d = [ad.norm(ad.sub(p, spec.goals[i, k]), axis=-1) for k in range(3)]
        near = [ad.sub(rg, dk) for dk in d]          # rg - d^{g_k}
        seen1 = ad.cummax(near[0], axis=0)
        seen2 = ad.cummax(near[1], axis=0)
        # g1, then g2, then g3
        g3_after_g2 = ad.cummax(ad.minimum(near[2], seen2), axis=0)
        c1 = ad.max(ad.minimum(g3_after_g2, seen1), axis=0)
        c2 = ad.max(ad.minimum(ad.maximum(near[1], near[2]), seen1), axis=0)
        c3 = ad.max(ad.minimum(ad.neg(near[2]), seen2), axis=0)
        # once inside a goal ball, never again from the next step on
        per_goal = []
        for k in range(3):
            away = ad.neg(near[k])
            future = ad.getitem(_rev_cummin(away), slice(1, None))
            now = ad.getitem(away, slice(0, -1))
            per_goal.append(ad.min(ad.maximum(now, future), axis=0))
        c4 = ad.min(ad.stack(per_goal, axis=0), axis=0)
        clear = [ad.sub(ad.norm(ad.sub(p, o), axis=-1), spec.r_obs) for o in spec.obstacles]
        c5 = ad.min(ad.min(ad.stack(clear, axis=0), axis=0), axis=0)
        gaps = [ad.sub(ad.norm(ad.sub(p, _robot(y, j)), axis=-1), 2.0 * spec.r_rob) for j in range(n) if j != i]
        c6 = ad.min(ad.min(ad.stack(gaps, axis=0), axis=0), axis=0)
        c7 = ad.max(_rev_cummin(near[2]), axis=0)
        result.append([c1, c2, c3, c4, c5, c6, c7])
    return result


def tltl_robustness(y, spec: TltlSpec):
    """Loss form ``-min(conjuncts)`` per robot, stacked on the last axis."""
    per_robot = [ad.neg(ad.min(ad.stack(c, axis=0), axis=0)) for c in tltl_conjuncts(y, spec)]
    return ad.stack(per_robot, axis=-1)


def waypoint_loss(y, spec: TltlSpec):
    """Sum of the robots' TLTL losses plus the goal-distance regularizer."""
    tl = ad.sum(tltl_robustness(y, spec), axis=-1)
    e = ad.sub(y, spec.final_targets)
    reg = ad.mul(spec.alpha_reg, ad.sum(ad.sum(ad.mul(e, e), axis=-1), axis=0))
    return ad.add(tl, reg)


def sample_disturbances(kind: str, params: dict, n: int, seed: int) -> list:
    """Seeded samples of initial positions or of Gaussian ``(v, d)`` sequences.

    ``initial_condition``: params ``start`` (nominal positions) and ``std``;
    each sample is a position vector, velocities being zero.
    ``gaussian_noise``: params ``horizon``, ``dim`` and ``std`` (and optional
    ``dim_d``); each sample is a ``(v, d)`` pair of ``(T+1, dim)`` arrays.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "initial_condition":
        start = np.asarray(params["start"], dtype=float).reshape(-1)
        std = float(params.get("std", 0.2))
        return [start + std * rng.normal(size=start.shape) for _ in range(n)]
    if kind == "gaussian_noise":
        T = int(params["horizon"])
        dim = int(params["dim"])
        dim_d = int(params.get("dim_d", dim))
        std = float(params.get("std", 0.1))
        return [(std * rng.normal(size=(T + 1, dim)), std * rng.normal(size=(T + 1, dim_d))) for _ in range(n)]
    raise ValueError(f"unknown disturbance kind {kind!r}")

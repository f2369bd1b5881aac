"""Scenario assembly, batched closed-loop rollouts, training and certificates.

Signals inside a rollout are time-major with a batch axis: ``(T+1, B, dim)``.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import ScenarioConfig
from .objectives import CorridorLoss, TltlSpec, corridor_loss, sample_disturbances, tltl_conjuncts, \
    tltl_robustness, waypoint_loss
from .plants import FleetPlant, RobotFleet
from .ren import RenDims, RenParams, RenOperator, RenTwoPort, init_params, materialize
from .signals import tail_energy_ratio
from .youla import BoostController, ImcController, MeasuredDistController

CERT_HORIZON = 200
CERT_TAIL_START = 100
CERT_TOL = 0.05


def thread_cap() -> int:
    """Worker cap from ``BOOSTCTL_THREADS`` (default 1)."""
    raw = os.environ.get("BOOSTCTL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"BOOSTCTL_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError("BOOSTCTL_THREADS must be >= 1")
    return n


@dataclass
class Scenario:
    cfg: ScenarioConfig
    fleet: RobotFleet
    params: RenParams
    loss_cfg: object

    @property
    def dim(self) -> int:
        return self.fleet.dim

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    @property
    def nominal_start(self) -> np.ndarray:
        return self.fleet.start_vector

    @property
    def theta0(self) -> np.ndarray:
        return self.params.theta


def ren_dims(cfg: ScenarioConfig) -> RenDims:
    n = cfg.dim
    q_in = 2 * n if cfg.architecture == "measured_dist" else n
    return RenDims(cfg.ren.q1, cfg.ren.q2, q_in, n)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    p = cfg.plant
    fleet = RobotFleet(np.asarray(p.start), np.asarray(p.targets), mass=p.mass, b1=p.b1, b2=p.b2,
                       k1=p.k, k2=p.k, ts=p.ts)
    params = init_params(ren_dims(cfg), seed=cfg.seed, alpha=cfg.ren.alpha, beta=cfg.ren.beta,
                         bias_mode=cfg.ren.bias_mode, bias_horizon=cfg.horizon, std=cfg.ren.init_std)
    if cfg.loss_kind == "corridor":
        c = cfg.corridor
        loss_cfg = CorridorLoss(fleet.target_vector, np.eye(cfg.dim), c.alpha_u, c.alpha_ca, c.alpha_obs,
                                c.r_agent, c.D, c.eps, np.asarray(c.obstacles), c.sigma * np.eye(2))
    else:
        w = cfg.waypoint
        loss_cfg = TltlSpec(np.asarray(w.goals), np.asarray(w.obstacles), w.r_obs, w.r_rob, w.goal_radius,
                            w.alpha_reg)
    return Scenario(cfg, fleet, params, loss_cfg)


def make_controller(scn: Scenario, mats, t_max: int):
    model = FleetPlant(scn.fleet, start=scn.nominal_start)
    arch = scn.cfg.architecture
    if arch == "measured_dist":
        psi = RenTwoPort(scn.params, scn.dim, mats=mats)
        return MeasuredDistController(model, psi, t_max=t_max, record=False, clone=False)
    q = RenOperator(scn.params, mats=mats)
    if arch == "imc":
        return ImcController(model, q, t_max=t_max, record=False, clone=False)
    return BoostController(model, q, k_base=None, t_max=t_max, record=False, clone=False)


def rollout(scn: Scenario, theta, starts=None, v=None, d=None, horizon: int | None = None):
    """Closed loop over ``[0, horizon]`` for a batch of true initial positions.

    ``starts``: ``(B, dim)``; ``v``, ``d``: ``(T+1, B, dim)`` or ``None``.
    Returns ``(y, u)``, tape variables when ``theta`` is one.
    """
    T = scn.horizon if horizon is None else horizon
    starts = np.atleast_2d(scn.nominal_start if starts is None else np.asarray(starts, dtype=float))
    batch = starts.shape[0]
    mats = materialize(scn.params, theta)
    true = FleetPlant(scn.fleet, start=starts)
    ctrl = make_controller(scn, mats, t_max=T + 1)
    u_prev = np.zeros((batch, scn.dim))
    ys, us = [], []
    for t in range(T + 1):
        y = true.step(u_prev)
        if v is not None:
            y = ad.add(y, v[t])
        uo = ctrl.step(y, u_prev) if ctrl.n_slots == 2 else ctrl.step(y)
        u = uo if d is None else ad.add(uo, d[t])
        ys.append(y)
        us.append(u)
        u_prev = u
    return ad.stack(ys, axis=0), ad.stack(us, axis=0)


def trajectory_loss(scn: Scenario, y, u):
    """Per-sample loss, shape ``(B,)``."""
    if scn.cfg.loss_kind == "corridor":
        return corridor_loss(y, u, scn.loss_cfg)
    return waypoint_loss(y, scn.loss_cfg)


def _aggregate(values, how: str):
    return ad.mean(values) if how == "mean" else ad.max(values)


@dataclass
class Batch:
    starts: np.ndarray
    v: np.ndarray | None = None
    d: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.starts.shape[0]


def training_set(scn: Scenario) -> Batch:
    """Fixed seeded training samples.

    Corridor: perturbed initial positions.  Waypoint: nominal start with
    Gaussian output and input noise.
    """
    cfg = scn.cfg
    n, T = cfg.train.n_train, cfg.horizon
    if cfg.loss_kind == "corridor":
        starts = sample_disturbances("initial_condition", {"start": scn.nominal_start, "std": cfg.train.ic_std},
                                     n, cfg.seed + 1)
        return Batch(np.stack(starts))
    noise = sample_disturbances("gaussian_noise", {"horizon": T, "dim": scn.dim, "std": cfg.train.noise_std},
                                n, cfg.seed + 1)
    v = np.stack([a for a, _ in noise], axis=1)
    d = np.stack([b for _, b in noise], axis=1)
    return Batch(np.tile(scn.nominal_start, (n, 1)), v, d)


def take(batch: Batch, idx) -> Batch:
    idx = np.asarray(idx)
    return Batch(batch.starts[idx], None if batch.v is None else batch.v[:, idx],
                 None if batch.d is None else batch.d[:, idx])


def batch_loss(scn: Scenario, theta, batch: Batch):
    y, u = rollout(scn, theta, batch.starts, batch.v, batch.d)
    return _aggregate(trajectory_loss(scn, y, u), scn.cfg.train.aggregator)


def dataset_loss(scn: Scenario, theta, batch: Batch | None = None, chunk: int = 25) -> float:
    """Mean per-sample loss over a whole sample set, evaluated in chunks."""
    batch = training_set(scn) if batch is None else batch
    theta = np.asarray(theta, dtype=float)
    chunks = [np.arange(i, min(i + chunk, batch.size)) for i in range(0, batch.size, chunk)]

    def one(idx):
        b = take(batch, idx)
        y, u = rollout(scn, theta, b.starts, b.v, b.d)
        return np.asarray(trajectory_loss(scn, y, u))

    workers = min(thread_cap(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, chunks))
    else:
        parts = [one(c) for c in chunks]
    return float(np.mean(np.concatenate(parts)))


def tltl_dataset_loss(scn: Scenario, theta, batch: Batch | None = None) -> float:
    """Mean summed TLTL loss (no regularizer) over a sample set."""
    batch = training_set(scn) if batch is None else batch
    y, _ = rollout(scn, np.asarray(theta, dtype=float), batch.starts, batch.v, batch.d)
    return float(np.mean(np.sum(tltl_robustness(y, scn.loss_cfg), axis=-1)))


@dataclass
class TrainResult:
    theta0: np.ndarray
    theta: np.ndarray
    log: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)


LOG_COLUMNS = ("epoch", "mean_loss", "grad_norm", "wall_time_ms")


def train(cfg: ScenarioConfig, epochs: int | None = None, on_epoch=None) -> TrainResult:
    """Adam on the batch loss; θ is stored every ``checkpoint_every`` epochs and at the end.

    ``checkpoints[k]`` is θ before the update of epoch ``k``; the final
    entry is keyed by the number of completed epochs.
    """
    scn = build_scenario(cfg)
    epochs = cfg.train.epochs if epochs is None else epochs
    data = training_set(scn)
    rng = np.random.default_rng(cfg.seed + 2)
    theta = scn.theta0.copy()
    opt = ad.Adam(theta.size, lr=cfg.train.lr)
    result = TrainResult(theta.copy(), theta.copy())
    every = max(1, cfg.train.checkpoint_every)
    for k in range(epochs):
        t0 = time.perf_counter()
        if k % every == 0:
            result.checkpoints[k] = theta.copy()
        if cfg.loss_kind == "corridor":
            b = take(data, rng.choice(data.size, size=cfg.train.batch_size, replace=False))
        else:
            noise = sample_disturbances("gaussian_noise", {"horizon": cfg.horizon, "dim": scn.dim,
                                                           "std": cfg.train.noise_std},
                                        cfg.train.batch_size, int(rng.integers(2 ** 31)))
            b = Batch(np.tile(scn.nominal_start, (cfg.train.batch_size, 1)),
                      np.stack([a for a, _ in noise], axis=1), np.stack([c for _, c in noise], axis=1))
        value, g = ad.grad(lambda th: batch_loss(scn, th, b), theta)
        theta = opt.step(theta, g)
        row = {"epoch": k, "mean_loss": value, "grad_norm": float(np.linalg.norm(g)),
               "wall_time_ms": 1e3 * (time.perf_counter() - t0)}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
    result.checkpoints[epochs] = theta.copy()
    result.theta = theta
    return result


@dataclass(frozen=True)
class Certificate:
    tail_ratio: float
    passed: bool


def decaying_disturbances(scn: Scenario, seed: int, horizon: int = CERT_HORIZON, rate: float = 0.9):
    rng = np.random.default_rng(seed)
    decay = rate ** np.arange(horizon + 1)[:, None, None]
    v = decay * rng.normal(size=(horizon + 1, 1, scn.dim))
    d = decay * rng.normal(size=(horizon + 1, 1, scn.dim))
    return v, d


def certify(scn: Scenario, theta, seed: int = 0, horizon: int = CERT_HORIZON,
            tail_start: int = CERT_TAIL_START, tol: float = CERT_TOL) -> Certificate:
    """Tail-energy test of the disturbance-induced closed-loop response.

    Compares the loop driven by exponentially decaying ``(v, d)`` against the
    undisturbed loop from the same start; the difference must carry less than
    ``tol`` of its energy after ``tail_start``.
    """
    theta = np.asarray(theta, dtype=float)
    v, d = decaying_disturbances(scn, seed, horizon)
    y1, u1 = rollout(scn, theta, None, v, d, horizon)
    y0, u0 = rollout(scn, theta, None, None, None, horizon)
    diff = np.concatenate([np.asarray(y1 - y0)[:, 0], np.asarray(u1 - u0)[:, 0]], axis=-1)
    ratio = tail_energy_ratio(diff, start=tail_start)
    return Certificate(float(ratio), bool(ratio < tol))


def _pair_distances(y: np.ndarray) -> np.ndarray:
    n = y.shape[-1] // 2
    p = y.reshape(y.shape[:-1] + (n, 2))
    out = [np.linalg.norm(p[..., i, :] - p[..., j, :], axis=-1) for i in range(n) for j in range(i + 1, n)]
    return np.stack(out, axis=-1) if out else np.full(y.shape[:-1] + (1,), np.inf)


def rollout_summary(scn: Scenario, theta, horizon_factor: int = 4, seed: int | None = None):
    """Nominal rollout over ``horizon_factor * T`` and its summary numbers.

    Returns ``(summary, y, u, v, d)`` with the applied disturbances.

    With ``seed`` given, waypoint rollouts use one seeded noise realization
    and corridor rollouts one seeded initial-condition sample.
    """
    cfg = scn.cfg
    T = cfg.horizon
    H = horizon_factor * T
    starts, v, d = None, None, None
    if seed is not None:
        rng = np.random.default_rng(seed)
        if cfg.loss_kind == "corridor":
            starts = scn.nominal_start + cfg.train.ic_std * rng.normal(size=(1, scn.dim))
        else:
            v = np.zeros((H + 1, 1, scn.dim))
            d = np.zeros((H + 1, 1, scn.dim))
            v[:T + 1] = cfg.train.noise_std * rng.normal(size=(T + 1, 1, scn.dim))
            d[:T + 1] = cfg.train.noise_std * rng.normal(size=(T + 1, 1, scn.dim))
    y, u = rollout(scn, np.asarray(theta, dtype=float), starts, v, d, H)
    y, u = np.asarray(y)[:, 0], np.asarray(u)[:, 0]
    v = np.zeros_like(y) if v is None else v[:, 0]
    d = np.zeros_like(u) if d is None else d[:, 0]
    summary = {
        "scenario": cfg.scenario,
        "horizon": T,
        "rollout_horizon": H,
        "min_inter_robot_distance": float(_pair_distances(y).min()),
        "final_target_error": float(np.linalg.norm(y[-1] - scn.fleet.target_vector)),
    }
    if cfg.loss_kind == "corridor":
        lc = scn.loss_cfg
        n = scn.dim // 2
        pos = y.reshape(-1, n, 2)
        # obstacle footprint: one standard deviation of its Gaussian plus the robot radius
        reach = float(np.sqrt(np.linalg.eigvalsh(lc.sigma).max())) + lc.r_agent
        dist = np.linalg.norm(pos[:, :, None, :] - lc.obstacles[None, None], axis=-1)
        summary["min_obstacle_clearance"] = float(dist.min() - reach)
        summary["collision_free"] = bool(summary["min_inter_robot_distance"] > 2 * lc.r_agent)
        summary["loss"] = float(corridor_loss(y[:T + 1, None], u[:T + 1, None], lc)[0])
    else:
        spec = scn.loss_cfg
        yw = y[:T + 1, None]
        conj = tltl_conjuncts(yw, spec)
        summary["tltl_robustness"] = [float(-r) for r in np.asarray(tltl_robustness(yw, spec))[0]]
        summary["collision_conjunct"] = [float(np.asarray(c[5])[0]) for c in conj]
        summary["obstacle_conjunct"] = [float(np.asarray(c[4])[0]) for c in conj]
        summary["min_obstacle_clearance"] = min(summary["obstacle_conjunct"])
    return summary, y, u, v, d

"""Property suites behind ``boostctl verify``.

Each suite returns a list of :class:`CheckResult`; every check compares an
implementation route against an independent oracle on seeded random data.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .clmaps import ClosedLoopUo, build_psi_from_m, extract_phi
from .distributed import (Agent, TopologyBreach, block_plant, block_q, bool_prod, bool_sum, chain_adjacency,
                          full_adjacency, identity_adjacency, in_neighbors, leq, localization_check,
                          run_distributed, StructuredOperator)
from .operators import (Compose, Identity, Sum, causality_violations, evaluate, invert_feedthrough,
                        invert_two_port)
from .plants import LtiPlant, lti_toeplitz
from .randops import (random_adjacency, random_causal_operator, random_stable_lti, random_strict_operator,
                      random_two_port)
from .ren import RenDims, init_params, materialize, ren_forward, RenOperator
from .youla import ImcController, robustness_check, youla_controller_via_inversion
from .clmaps import simulate_closed_loop


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float

    def as_dict(self) -> dict:
        return asdict(self)


def _chk(name: str, value: float, tol: float, below: bool = True) -> CheckResult:
    ok = value < tol if below else value > tol
    return CheckResult(name, bool(ok), float(value), float(tol))


def _pair(seed: int, dim: int = 2):
    return random_strict_operator(dim, dim, seed=seed), random_causal_operator(dim, dim, seed=seed + 1000)


def suite_operators(n: int = 10, horizon: int = 12) -> list[CheckResult]:
    viol = 0
    err = 0.0
    rng = np.random.default_rng(0)
    for s in range(n):
        g, q = _pair(s)
        viol += len(causality_violations(g, seed=s))
        viol += len(causality_violations(random_two_port((2, 2), 2, seed=s), seed=s))
        viol += len(causality_violations(Compose(g, q), seed=s))
        upsilon = Sum(Identity(2), Compose(g, q))
        b = rng.normal(size=(horizon + 1, 2))
        a = evaluate(upsilon, b)
        err = max(err, float(np.abs(invert_feedthrough(upsilon, a) - b).max()))
    return [_chk("strict slots ignore current input", viol, 0.5),
            _chk("I + GQ inverse roundtrip", err, 1e-10)]


def suite_clmaps(n: int = 10, horizon: int = 15) -> list[CheckResult]:
    rng = np.random.default_rng(1)
    inv_err = rt_err = 0.0
    for s in range(n):
        g, k = _pair(s)
        phi = extract_phi(g, k)
        v, d = rng.normal(size=(horizon + 1, 2)), rng.normal(size=(horizon + 1, 2))
        y, u = phi(v, d)
        v2, d2 = invert_two_port(phi.psi, y, u)
        inv_err = max(inv_err, float(max(np.abs(v2 - v).max(), np.abs(d2 - d).max())))
        rebuilt = build_psi_from_m(g, ClosedLoopUo(g, k))
        y2, u2 = rebuilt(v, d)
        rt_err = max(rt_err, float(max(np.abs(y2 - y).max(), np.abs(u2 - u).max())))
    lti_err = lti_cross_check(horizon=20)
    return [_chk("closed-loop map inversion", inv_err, 1e-10),
            _chk("rebuild from free operator", rt_err, 1e-10),
            _chk("LTI block-Toeplitz cross-check", lti_err, 1e-9)]


def lti_cross_check(horizon: int = 20, seed: int = 3) -> float:
    """Max deviation of the simulated LTI loop from the Toeplitz closed-loop formulas."""
    rng = np.random.default_rng(seed)
    p = random_stable_lti(3, 2, 2, seed=seed)
    p.x0 = rng.normal(size=3)
    Kgain = 0.3 * rng.normal(size=(2, 2))
    from .operators import StaticGain

    k = StaticGain(Kgain)
    Gm, free = lti_toeplitz(p, horizon)
    Km = np.kron(np.eye(horizon + 1), Kgain)
    I = np.eye(Gm.shape[0])
    X = np.linalg.inv(I - Gm @ Km)
    W = X @ Gm
    Y = Km @ X
    Z = I + Y @ Gm
    v, d = rng.normal(size=(horizon + 1, 2)), rng.normal(size=(horizon + 1, 2))
    y, u = simulate_closed_loop(p.operator(), k, v, d)
    y_or = X @ (v.ravel() + free) + W @ d.ravel()
    u_or = Y @ (v.ravel() + free) + Z @ d.ravel()
    err = max(np.abs(y.ravel() - y_or).max(), np.abs(u.ravel() - u_or).max())
    # achievability: [I -G] Φ = [I 0] and Φ [-G; I] = [0; I]
    a1 = np.abs(np.hstack([X - Gm @ Y, W - Gm @ Z]) - np.hstack([I, 0 * I])).max()
    a2 = np.abs(np.vstack([-X @ Gm + W, -Y @ Gm + Z]) - np.vstack([0 * I, I])).max()
    return float(max(err, a1, a2))


def suite_youla(n: int = 10, horizon: int = 30) -> list[CheckResult]:
    rng = np.random.default_rng(2)
    err = 0.0
    for s in range(n):
        g, q = _pair(s)
        y = rng.normal(size=(horizon + 1, 2))
        rec = evaluate(ImcController(g, q), y)
        inv = youla_controller_via_inversion(g, q, y)
        err = max(err, float(np.abs(rec - inv).max()))
    model = LtiPlant([[0.5]], [[1.0]], [[1.0]]).operator()
    true = LtiPlant([[0.6]], [[1.0]], [[1.0]]).operator()
    budget = robustness_check(true, model, q_gain=0.0, probes=8, horizon=200)
    return [_chk("IMC recursion vs inversion", err, 1e-10),
            _chk("scalar mismatch gain estimate", abs(budget.gamma_delta - 0.5), 0.05)]


def _chain_agents(size: int, d_g, d_q, seed: int = 0) -> list[Agent]:
    agents = []
    for i in range(size):
        ng, nq = len(in_neighbors(d_g, i)), len(in_neighbors(d_q, i))
        agents.append(Agent(random_strict_operator(ng, 1, seed=seed + i),
                            random_causal_operator(nq, 1, seed=seed + 100 + i), 1, 1))
    return agents


def suite_distributed(horizon: int = 20) -> list[CheckResult]:
    size = 4
    d_g = chain_adjacency(size)
    d_q = random_adjacency(size, 0.5, seed=5)
    cap = bool_sum(d_g, d_q)
    agents = _chain_agents(size, d_g, d_q)
    rng = np.random.default_rng(4)
    v, d = rng.normal(size=(horizon + 1, size)), rng.normal(size=(horizon + 1, size))
    run = run_distributed(agents, d_g, d_q, cap, v, d)
    G, Q = block_plant(agents, d_g), block_q(agents, d_q)
    y, u = simulate_closed_loop(G.clone(), ImcController(G, Q), v, d)
    eq = float(max(np.abs(y - run.y).max(), np.abs(u - run.u).max()))
    outside = sum(1 for m in run.log if not (d_q if m.round == "omega" else d_g)[m.sender, m.receiver])
    dk = run.realized_dk(size)
    dk_ok = float(np.array_equal(dk, bool_sum(d_q, d_g)) and leq(dk, cap))
    dec = _chain_agents(size, d_g, identity_adjacency(size), seed=7)
    run2 = run_distributed(dec, d_g, identity_adjacency(size), full_adjacency(size), v, d)
    one_round = float(all(m.round == "uo" for m in run2.log) and max(run2.rounds_per_step()) == 1)
    return [_chk("distributed equals centralized", eq, 1e-12),
            _chk("messages outside topology", outside, 0.5),
            _chk("realized D(K) = D(Q) + D(G) <= T", dk_ok, 0.5, below=False),
            _chk("decentralized Q uses one round", one_round, 0.5, below=False)]


def suite_localization(size: int = 4, seeds: int = 5) -> list[CheckResult]:
    worst = 0
    for s in range(seeds):
        s_u = random_adjacency(size, 0.35, seed=10 + s)
        d_g = random_adjacency(size, 0.35, seed=20 + s)
        g = StructuredOperator([random_strict_operator(len(in_neighbors(d_g, i)), 1, seed=s * 10 + i)
                                for i in range(size)], d_g, [[1] * size])
        psi = StructuredOperator([random_two_port((len(in_neighbors(s_u, i)),) * 2, 1, seed=s * 10 + i + 50)
                                  for i in range(size)], s_u, [[1] * size, [1] * size])
        ou, oy = localization_check(g, psi, s_u, seed=s)
        worst = max(worst, int(np.abs(oy - bool_prod(s_u, d_g)).sum() + np.abs(ou - s_u).sum()))
    return [_chk("observed sparsity equals S_u and S_u D(G)", worst, 0.5)]


def suite_ren(n: int = 10, horizon: int = 60) -> list[CheckResult]:
    alpha = 0.9
    rng = np.random.default_rng(6)
    worst_slope = -np.inf
    worst_gain = 0.0
    for s in range(n):
        params = init_params(RenDims(4, 4, 2, 2), seed=s, alpha=alpha, bias_mode="none", std=1.0)
        mats = materialize(params)
        x = rng.normal(size=(horizon + 1, 2))
        xa, xb = rng.normal(size=4), rng.normal(size=4)
        dist = []
        for t in range(horizon + 1):
            dist.append(np.linalg.norm(xa - xb))
            _, xa = ren_forward(mats, xa, x[t], t)
            _, xb = ren_forward(mats, xb, x[t], t)
        dist = np.maximum(np.array(dist), 1e-300)
        ok = dist > 1e-12
        slope = np.polyfit(np.arange(ok.sum()), np.log(dist[ok]), 1)[0] if ok.sum() > 2 else -np.inf
        worst_slope = max(worst_slope, slope - np.log(alpha))
        gp = init_params(RenDims(4, 4, 2, 2), seed=s, beta=1.0, bias_mode="none", std=1.0)
        a, b = rng.normal(size=(horizon + 1, 2)), rng.normal(size=(horizon + 1, 2))
        ua, ub = evaluate(RenOperator(gp), a), evaluate(RenOperator(gp), b)
        worst_gain = max(worst_gain, np.linalg.norm(ua - ub) / np.linalg.norm(a - b))
    return [_chk("contraction slope excess over log(alpha)", worst_slope, 0.05),
            _chk("incremental gain with beta = 1", worst_gain, 1.0)]


def suite_autodiff() -> list[CheckResult]:
    rng = np.random.default_rng(8)
    x = rng.normal(size=6)

    def f(th):
        a = ad.reshape(ad.getitem(th, slice(0, 4)), (2, 2))
        z = ad.tanh(ad.matmul(a, ad.getitem(th, slice(4, 6))))
        return ad.add(ad.sum(ad.mul(z, z)), ad.norm(ad.exp(ad.mul(0.3, th)), axis=-1))

    _, g = ad.grad(f, x)
    h = 1e-6
    fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(6)])
    err = float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)))
    theta = np.ones(4) / 2.0
    opt = ad.Adam(4, lr=0.05)
    for _ in range(500):
        theta = opt.step(theta, 2 * theta)
    return [_chk("gradient vs central differences", err, 1e-6),
            _chk("Adam on a quadratic bowl", float(np.linalg.norm(theta)), 1e-3)]


SUITES = {
    "operators": suite_operators,
    "clmaps": suite_clmaps,
    "youla": suite_youla,
    "distributed": lambda: suite_distributed() + suite_localization(),
    "ren": suite_ren,
    "autodiff": suite_autodiff,
}


def verify(suite: str) -> list[CheckResult]:
    if suite == "all":
        return [r for name in SUITES for r in SUITES[name]()]
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[suite]()

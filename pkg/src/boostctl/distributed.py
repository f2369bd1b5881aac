"""Binary adjacency algebra, block-structured operators and the per-agent controller.

Convention: ``D[i, j] = 1`` means subsystem ``i`` sends to subsystem ``j``.
The in-neighbors of ``i`` are the ``j`` with ``D[j, i] = 1``; the diagonal is
always one.  ``bool_prod(S1, S2)[i, k] = 1`` when some ``j`` has
``S1[i, j] = S2[j, k] = 1``: a path that takes an ``S1`` edge and then an
``S2`` edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence as Seq

import numpy as np

from . import autodiff as ad
from .operators import C, S, CausalOperator, CausalityError, DimensionError, evaluate


class TopologyError(ValueError):
    """A sparsity precondition such as ``D(G) <= T`` does not hold."""


class TopologyBreach(AssertionError):
    """A message travelled over an edge outside the declared topology."""


class LocalizationError(AssertionError):
    pass


def adjacency(a) -> np.ndarray:
    """Binary square matrix with the unit diagonal enforced."""
    m = (np.asarray(a) != 0).astype(int)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError("adjacency matrices are square")
    np.fill_diagonal(m, 1)
    return m


def identity_adjacency(size: int) -> np.ndarray:
    return np.eye(size, dtype=int)


def chain_adjacency(size: int) -> np.ndarray:
    """``1 -> 2 -> ... -> size``."""
    a = np.eye(size, dtype=int)
    for i in range(size - 1):
        a[i, i + 1] = 1
    return a


def full_adjacency(size: int) -> np.ndarray:
    return np.ones((size, size), dtype=int)


def _pair(s1, s2) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(s1), np.asarray(s2)
    if a.shape != b.shape:
        raise DimensionError(f"adjacency shapes differ: {a.shape} vs {b.shape}")
    return (a != 0).astype(int), (b != 0).astype(int)


def bool_sum(s1, s2) -> np.ndarray:
    a, b = _pair(s1, s2)
    return a | b


def bool_prod(s1, s2) -> np.ndarray:
    a, b = _pair(s1, s2)
    return (a @ b > 0).astype(int)


def leq(s1, s2) -> bool:
    a, b = _pair(s1, s2)
    return bool(np.all(a <= b))


def in_neighbors(d, i: int) -> list[int]:
    d = adjacency(d)
    return [j for j in range(d.shape[0]) if d[j, i]]


def out_neighbors(d, i: int, include_self: bool = False) -> list[int]:
    """``N̄+(i)`` (without ``i``) by default."""
    d = adjacency(d)
    return [j for j in range(d.shape[0]) if d[i, j] and (include_self or j != i)]


def _offsets(dims: Seq[int]) -> list[int]:
    return list(np.concatenate([[0], np.cumsum(dims)]).astype(int))


def _block(x, offsets: list[int], j: int):
    return ad.getitem(x, (Ellipsis, slice(offsets[j], offsets[j + 1])))


class StructuredOperator(CausalOperator):
    """Block operator whose ``i``-th output block is ``local[i]`` applied to in-neighbor blocks.

    ``block_dims[s][j]`` is the width of agent ``j``'s block in slot ``s``.
    Local operator ``i`` receives, per slot, the concatenation of the blocks of
    ``in_neighbors(pattern, i)`` in increasing index order.
    """

    def __init__(self, local: Seq[CausalOperator], pattern, block_dims: Seq[Seq[int]]):
        self.pattern = adjacency(pattern)
        size = self.pattern.shape[0]
        if len(local) != size:
            raise DimensionError("one local operator per agent")
        block_dims = [list(map(int, b)) for b in block_dims]
        if any(len(b) != size for b in block_dims):
            raise DimensionError("block dimensions must list every agent")
        causality = local[0].causality
        if any(op.causality != causality for op in local):
            raise CausalityError("local operators must share their causality classes")
        self.local = [op.clone() for op in local]
        self.block_dims = block_dims
        self.neighbors = [in_neighbors(self.pattern, i) for i in range(size)]
        for i, op in enumerate(self.local):
            want = tuple(sum(b[j] for j in self.neighbors[i]) for b in block_dims)
            if op.in_dims != want:
                raise DimensionError(f"local operator {i} expects {op.in_dims}, in-neighbors give {want}")
        self.out_blocks = [op.out_dim for op in self.local]
        self.offsets = [_offsets(b) for b in block_dims]
        super().__init__(tuple(sum(b) for b in block_dims), sum(self.out_blocks), causality)

    @property
    def size(self) -> int:
        return self.pattern.shape[0]

    def _reset(self):
        for op in self.local:
            op.reset()

    def gather(self, slot: int, x, i: int):
        parts = [_block(x, self.offsets[slot], j) for j in self.neighbors[i]]
        return parts[0] if len(parts) == 1 else ad.concatenate(parts, axis=-1)

    def _step(self, *xs):
        outs = [op.step(*(self.gather(s, x, i) for s, x in enumerate(xs))) for i, op in enumerate(self.local)]
        return ad.concatenate(outs, axis=-1)


@dataclass
class Agent:
    """Local plant ``G^i`` (strict, reads in-neighbor inputs) and local ``Q^i`` (causal)."""

    g: CausalOperator
    q: CausalOperator
    y_dim: int
    u_dim: int


@dataclass(frozen=True)
class Message:
    t: int
    round: str           # "omega" or "uo"
    sender: int
    receiver: int
    payload_dim: int

    def as_json(self) -> dict:
        return {"t": self.t, "round": self.round, "from": self.sender, "to": self.receiver,
                "payload_dim": self.payload_dim}


@dataclass
class AgentMailbox:
    """Per-round inboxes plus the append-only message log."""

    size: int
    topology: dict
    inbox: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def send(self, t: int, rnd: str, sender: int, receiver: int, payload) -> None:
        if not self.topology[rnd][sender, receiver]:
            raise TopologyBreach(f"{rnd} message {sender}->{receiver} outside the declared topology")
        self.inbox.setdefault((rnd, receiver), {})[sender] = payload
        self.log.append(Message(t, rnd, sender, receiver, int(np.size(payload))))

    def read(self, rnd: str, receiver: int, sender: int):
        return self.inbox[(rnd, receiver)][sender]

    def rounds_at(self, t: int) -> set[str]:
        return {m.round for m in self.log if m.t == t}


@dataclass
class DistributedRun:
    y: np.ndarray
    u: np.ndarray
    log: list

    def realized_dk(self, size: int) -> np.ndarray:
        dk = np.eye(size, dtype=int)
        for m in self.log:
            dk[m.sender, m.receiver] = 1
        return dk

    def rounds_per_step(self) -> list[int]:
        steps = sorted({m.t for m in self.log})
        return [len({m.round for m in self.log if m.t == t}) for t in steps]

    def export_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for m in self.log:
                fh.write(json.dumps(m.as_json()) + "\n")


def _local_input(values: list, neighbors: list[int]):
    parts = [values[j] for j in neighbors]
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=-1)


def run_distributed(agents: Seq[Agent], d_g, d_q, t_cap, v, d, plant: Seq[CausalOperator] | None = None
                    ) -> DistributedRun:
    """Closed loop with each agent running its own controller and explicit message rounds.

    Per step: physical outputs, local ``ω^i = y^i - G^i(u°)`` from received
    past ``u°``, ω-round over ``D(Q)``, local ``u°^i = Q^i(ω)``, u°-round over
    ``D(G)``.  ``plant`` gives the true local plants (defaults to the models).
    The two rounds are synchronous phases; iterating agents in index order
    is equivalent to any schedule because each phase only reads the previous
    phase's messages.
    """
    d_g, d_q, t_cap = adjacency(d_g), adjacency(d_q), adjacency(t_cap)
    size = len(agents)
    if d_g.shape[0] != size or d_q.shape[0] != size or t_cap.shape[0] != size:
        raise DimensionError("adjacency size must equal the number of agents")
    if not leq(d_g, t_cap):
        raise TopologyError("plant coupling D(G) is not contained in the admissible topology T")
    if not leq(d_q, t_cap):
        raise TopologyError("D(Q) is not contained in the admissible topology T")
    nb_g = [in_neighbors(d_g, i) for i in range(size)]
    nb_q = [in_neighbors(d_q, i) for i in range(size)]
    y_dims = [a.y_dim for a in agents]
    u_dims = [a.u_dim for a in agents]
    for i, a in enumerate(agents):
        if a.g.in_dims != (sum(u_dims[j] for j in nb_g[i]),) or a.g.out_dim != a.y_dim:
            raise DimensionError(f"local plant {i} does not match its in-neighbors")
        if a.q.in_dims != (sum(y_dims[j] for j in nb_q[i]),) or a.q.out_dim != a.u_dim:
            raise DimensionError(f"local Q {i} does not match its in-neighbors")
        if a.g.causality != (S,) or a.q.causality != (C,):
            raise CausalityError("local plants are strictly causal, local Q causal")
    v = np.asarray(v, dtype=float)
    d = np.asarray(d, dtype=float)
    yo, uo_off = _offsets(y_dims), _offsets(u_dims)
    models = [a.g.clone().reset() for a in agents]
    qs = [a.q.clone().reset() for a in agents]
    true = [g.clone().reset() for g in (plant if plant is not None else [a.g for a in agents])]
    box = AgentMailbox(size, {"omega": d_q, "uo": d_g})
    u_prev = [np.zeros(m) for m in u_dims]
    uo_prev = [np.zeros(m) for m in u_dims]
    ys, us = [], []
    for t in range(v.shape[0]):
        # physical plant, own outputs measured locally
        y = [np.asarray(true[i].step(_local_input(u_prev, nb_g[i]))) + v[t, yo[i]:yo[i + 1]]
             for i in range(size)]
        omega = []
        for i in range(size):
            received = [uo_prev[i] if j == i else (np.zeros(u_dims[j]) if t == 0 else box.read("uo", i, j))
                        for j in nb_g[i]]
            model_in = received[0] if len(received) == 1 else np.concatenate(received)
            omega.append(y[i] - np.asarray(models[i].step(model_in)))
        for i in range(size):
            for j in out_neighbors(d_q, i):
                box.send(t, "omega", i, j, omega[i])
        uo = []
        for i in range(size):
            parts = [omega[i] if j == i else box.read("omega", i, j) for j in nb_q[i]]
            uo.append(np.asarray(qs[i].step(parts[0] if len(parts) == 1 else np.concatenate(parts))))
        for i in range(size):
            for j in out_neighbors(d_g, i):
                box.send(t, "uo", i, j, uo[i])
        u = [uo[i] + d[t, uo_off[i]:uo_off[i + 1]] for i in range(size)]
        ys.append(np.concatenate(y))
        us.append(np.concatenate(u))
        u_prev, uo_prev = u, uo
    return DistributedRun(np.stack(ys), np.stack(us), box.log)


def block_plant(agents: Seq[Agent], d_g) -> StructuredOperator:
    return StructuredOperator([a.g for a in agents], d_g, [[a.u_dim for a in agents]])


def block_q(agents: Seq[Agent], d_q) -> StructuredOperator:
    return StructuredOperator([a.q for a in agents], d_q, [[a.y_dim for a in agents]])


class _MeasuredDistMaps:
    """``u = ψ(v, d) + d`` and ``y = G(u) + v`` evaluated together."""

    def __init__(self, g: CausalOperator, psi: CausalOperator):
        self.g = g
        self.psi = psi

    def __call__(self, v, d) -> tuple[np.ndarray, np.ndarray]:
        u = evaluate(self.psi, v, d) + d
        return evaluate(self.g, u) + v, u


def observed_sparsity(maps, y_dims: Seq[int], u_dims: Seq[int], horizon: int = 10, seed: int = 0,
                      tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Perturb each agent's ``(v^i, d^i)`` and record which output blocks move at any ``t``."""
    rng = np.random.default_rng(seed)
    size = len(y_dims)
    yo, uo = _offsets(y_dims), _offsets(u_dims)
    v = rng.normal(size=(horizon + 1, yo[-1]))
    d = rng.normal(size=(horizon + 1, uo[-1]))
    y0, u0 = maps(v, d)
    obs_u = np.eye(size, dtype=int)
    obs_y = np.eye(size, dtype=int)
    for i in range(size):
        for which in ("v", "d"):
            v1, d1 = v.copy(), d.copy()
            if which == "v":
                v1[:, yo[i]:yo[i + 1]] += rng.normal(size=(horizon + 1, y_dims[i]))
            else:
                d1[:, uo[i]:uo[i + 1]] += rng.normal(size=(horizon + 1, u_dims[i]))
            y1, u1 = maps(v1, d1)
            for j in range(size):
                if np.max(np.abs(u1[:, uo[j]:uo[j + 1]] - u0[:, uo[j]:uo[j + 1]])) > tol:
                    obs_u[i, j] = 1
                if np.max(np.abs(y1[:, yo[j]:yo[j + 1]] - y0[:, yo[j]:yo[j + 1]])) > tol:
                    obs_y[i, j] = 1
    return obs_u, obs_y


def localization_check(g_block: StructuredOperator, psi_u_free: StructuredOperator, s_u,
                       horizon: int = 10, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Observed ``(D(Ψ^u), D(Ψ^y))`` of the measured-disturbance loop.

    ``psi_u_free`` is the structured ``Ψ^{u°}`` with slots ``(v, d)`` (causal,
    strictly causal) and pattern ``s_u``.  Raises :class:`LocalizationError`
    when the observed spread exceeds ``s_u`` or ``bool_prod(s_u, D(G))``.
    """
    s_u = adjacency(s_u)
    if psi_u_free.n_slots != 2 or psi_u_free.causality[1] is not S:
        raise CausalityError("Ψ^{u°} must be strictly causal in d")
    y_dims = g_block.out_blocks
    u_dims = psi_u_free.out_blocks
    maps = _MeasuredDistMaps(g_block, psi_u_free)
    obs_u, obs_y = observed_sparsity(maps, y_dims, u_dims, horizon, seed)
    if not leq(obs_u, s_u):
        raise LocalizationError("input spread exceeds S_u")
    if not leq(obs_y, bool_prod(s_u, g_block.pattern)):
        raise LocalizationError("output spread exceeds S_u D(G)")
    return obs_u, obs_y

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from boostctl.checks import suite_distributed, suite_localization
from boostctl.clmaps import simulate_closed_loop
from boostctl.distributed import (Agent, AgentMailbox, LocalizationError, StructuredOperator, TopologyBreach,
                                  TopologyError, adjacency, block_plant, block_q, bool_prod, bool_sum,
                                  chain_adjacency, full_adjacency, identity_adjacency, in_neighbors, leq,
                                  localization_check, out_neighbors, run_distributed)
from boostctl.operators import DimensionError
from boostctl.randops import random_adjacency, random_causal_operator, random_strict_operator, random_two_port
from boostctl.youla import ImcController

mats = st.integers(2, 5).flatmap(lambda n: arrays(np.int64, (n, n), elements=st.integers(0, 1)))


def agents_for(d_g, d_q, seed=0):
    size = d_g.shape[0]
    return [Agent(random_strict_operator(len(in_neighbors(d_g, i)), 1, seed=seed + i),
                  random_causal_operator(len(in_neighbors(d_q, i)), 1, seed=seed + 50 + i), 1, 1)
            for i in range(size)]


def noise(size, horizon=10, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(horizon + 1, size)), rng.normal(size=(horizon + 1, size))


@given(mats)
def test_bool_sum_idempotent_and_identity_prod(s):
    assert np.array_equal(bool_sum(s, s), (s != 0).astype(int))
    assert np.array_equal(bool_prod(np.eye(len(s), dtype=int), s), (s != 0).astype(int))


@given(mats, mats, mats)
def test_sum_leq_iff_both_leq(a, b, c):
    n = min(len(a), len(b), len(c))
    a, b, c = a[:n, :n], b[:n, :n], c[:n, :n]
    assert (leq(a, c) and leq(b, c)) == leq(bool_sum(a, b), c)


def test_chain_two_hop():
    d = chain_adjacency(3)
    two = bool_prod(d, d)
    assert two[0, 2] == 1 and two[2, 0] == 0
    assert np.array_equal(two, np.triu(np.ones((3, 3), dtype=int)))


def test_adjacency_helpers():
    d = adjacency([[0, 1], [0, 0]])
    assert np.array_equal(d, [[1, 1], [0, 1]])
    assert in_neighbors(d, 1) == [0, 1] and out_neighbors(d, 0) == [1]
    assert out_neighbors(d, 0, include_self=True) == [0, 1]
    with pytest.raises(DimensionError):
        bool_sum(np.eye(2), np.eye(3))
    with pytest.raises(DimensionError):
        adjacency(np.ones((2, 3)))


def test_single_agent_equals_imc():
    one = np.ones((1, 1), dtype=int)
    ag = agents_for(one, one)
    v, d = noise(1, 20)
    run = run_distributed(ag, one, one, one, v, d)
    y, u = simulate_closed_loop(ag[0].g, ImcController(ag[0].g, ag[0].q), v, d)
    assert np.array_equal(run.y, y) and np.array_equal(run.u, u)
    assert run.log == []


@pytest.mark.parametrize("seed", range(4))
def test_distributed_equals_centralized(seed):
    size = 4
    d_g = random_adjacency(size, 0.4, seed=seed)
    d_q = random_adjacency(size, 0.4, seed=seed + 10)
    ag = agents_for(d_g, d_q, seed)
    v, d = noise(size, 15, seed)
    run = run_distributed(ag, d_g, d_q, bool_sum(d_g, d_q), v, d)
    G, Q = block_plant(ag, d_g), block_q(ag, d_q)
    y, u = simulate_closed_loop(G.clone(), ImcController(G, Q), v, d)
    assert max(np.abs(y - run.y).max(), np.abs(u - run.u).max()) < 1e-12
    assert all((d_q if m.round == "omega" else d_g)[m.sender, m.receiver] for m in run.log)
    dk = run.realized_dk(size)
    assert np.array_equal(dk, bool_sum(d_q, d_g))


def test_decentralized_q_uses_one_round():
    size = 3
    d_g = chain_adjacency(size)
    run = run_distributed(agents_for(d_g, identity_adjacency(size)), d_g, identity_adjacency(size),
                          d_g, *noise(size))
    assert {m.round for m in run.log} == {"uo"}
    assert max(run.rounds_per_step()) == 1
    assert np.array_equal(run.realized_dk(size), d_g)


def test_no_backward_influence_on_chain():
    size = 3
    d = chain_adjacency(size)
    ag = agents_for(d, d)
    v, dist = noise(size)
    base = run_distributed(ag, d, d, d, v, dist)
    dist2 = dist.copy()
    dist2[:, 2] += 1.0
    pert = run_distributed(ag, d, d, d, v, dist2)
    assert np.array_equal(base.u[:, 0], pert.u[:, 0])
    assert not np.array_equal(base.u[:, 2], pert.u[:, 2])


def test_topology_precondition():
    size = 3
    d_g = chain_adjacency(size)
    with pytest.raises(TopologyError):
        run_distributed(agents_for(d_g, d_g), d_g, d_g, identity_adjacency(size), *noise(size))
    with pytest.raises(TopologyError):
        run_distributed(agents_for(d_g, full_adjacency(size)), d_g, full_adjacency(size), d_g, *noise(size))


def test_mailbox_rejects_off_topology_messages():
    box = AgentMailbox(2, {"omega": identity_adjacency(2), "uo": chain_adjacency(2)})
    box.send(0, "uo", 0, 1, np.zeros(1))
    with pytest.raises(TopologyBreach):
        box.send(0, "uo", 1, 0, np.zeros(1))
    with pytest.raises(TopologyBreach):
        box.send(0, "omega", 0, 1, np.zeros(1))


def test_message_log_export(tmp_path):
    d = chain_adjacency(3)
    run = run_distributed(agents_for(d, d), d, d, d, *noise(3, 2))
    path = tmp_path / "log.jsonl"
    run.export_jsonl(path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == len(run.log)
    assert set(rows[0]) == {"t", "round", "from", "to", "payload_dim"}


def test_structured_operator_dimension_checks():
    d = chain_adjacency(2)
    with pytest.raises(DimensionError):
        StructuredOperator([random_strict_operator(1, 1, seed=0)] * 2, d, [[1, 1]])


def structured(size, s_u, d_g, seed):
    g = StructuredOperator([random_strict_operator(len(in_neighbors(d_g, i)), 1, seed=seed + i)
                            for i in range(size)], d_g, [[1] * size])
    psi = StructuredOperator([random_two_port((len(in_neighbors(s_u, i)),) * 2, 1, seed=seed + 20 + i)
                              for i in range(size)], s_u, [[1] * size, [1] * size])
    return g, psi


def test_localization_decoupled():
    eye = identity_adjacency(3)
    ou, oy = localization_check(*structured(3, eye, eye, 0), eye)
    assert np.array_equal(ou, eye) and np.array_equal(oy, eye)


def test_localization_chain_one_hop():
    eye, chain = identity_adjacency(3), chain_adjacency(3)
    ou, oy = localization_check(*structured(3, eye, chain, 1), eye)
    assert np.array_equal(ou, eye) and np.array_equal(oy, chain)


@pytest.mark.parametrize("seed", range(5))
def test_localization_random_patterns(seed):
    s_u = random_adjacency(4, 0.35, seed=seed)
    d_g = random_adjacency(4, 0.35, seed=seed + 100)
    ou, oy = localization_check(*structured(4, s_u, d_g, seed), s_u)
    assert np.array_equal(ou, s_u)
    assert np.array_equal(oy, bool_prod(s_u, d_g))


def test_localization_detects_wider_spread():
    s_u = chain_adjacency(3)
    g, psi = structured(3, s_u, identity_adjacency(3), 2)
    with pytest.raises(LocalizationError):
        localization_check(g, psi, identity_adjacency(3))


def test_verify_suites_pass():
    assert all(r.passed for r in suite_distributed() + suite_localization())

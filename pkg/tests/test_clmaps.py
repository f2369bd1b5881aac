import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boostctl.clmaps import (ClosedLoopUo, SMap, build_psi_from_m, controller_from_m, extract_phi,
                             simulate_closed_loop)
from boostctl.operators import (CausalityError, DimensionError, HorizonError, StaticGain, ZeroOperator,
                                evaluate, invert_two_port)
from boostctl.operators import C, S
from boostctl.plants import LtiPlant, lti_toeplitz
from boostctl.randops import random_causal_operator, random_stable_lti, random_strict_operator, random_two_port

seeds = st.integers(0, 10_000)


def loop(seed, dim=2):
    return random_strict_operator(dim, dim, seed=seed), random_causal_operator(dim, dim, seed=seed + 500)


def signals(seed, horizon=15, dim=2):
    rng = np.random.default_rng(seed + 1)
    return rng.normal(size=(horizon + 1, dim)), rng.normal(size=(horizon + 1, dim))


@given(seeds)
def test_open_loop_when_k_zero(seed):
    g, _ = loop(seed)
    v, _ = signals(seed)
    y, u = simulate_closed_loop(g, ZeroOperator((2,), 2), v, np.zeros_like(v))
    assert np.array_equal(u, np.zeros_like(u))
    assert np.allclose(y, evaluate(g, np.zeros_like(v)) + v, atol=1e-15)


def test_scalar_lti_static_gain_matches_toeplitz():
    p = LtiPlant([[0.5]], [[1.0]], [[1.0]])
    horizon, kg = 10, 0.2
    Gm, free = lti_toeplitz(p, horizon)
    I = np.eye(horizon + 1)
    K = kg * I
    X = np.linalg.inv(I - Gm @ K)
    rng = np.random.default_rng(0)
    v, d = rng.normal(size=(horizon + 1, 1)), rng.normal(size=(horizon + 1, 1))
    y, u = simulate_closed_loop(p.operator(), StaticGain(kg, 1), v, d)
    assert np.allclose(y.ravel(), X @ (v.ravel() + free) + X @ Gm @ d.ravel(), atol=1e-12)
    assert np.allclose(u.ravel(), K @ X @ v.ravel() + (I + K @ X @ Gm) @ d.ravel(), atol=1e-12)


def test_closed_loop_rejects_bad_inputs():
    g, k = loop(0)
    with pytest.raises(CausalityError):
        simulate_closed_loop(k, g, np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        simulate_closed_loop(g, k, np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(CausalityError):
        build_psi_from_m(g, ZeroOperator((2, 2), 2, (C, C)))


def test_phi_of_zero_is_free_response():
    g = LtiPlant([[0.5]], [[1.0]], [[1.0]], x0=[1.0]).operator()
    phi = extract_phi(g, ZeroOperator((1,), 1))
    z = np.zeros((6, 1))
    y, u = phi(z, z)
    assert np.allclose(y, evaluate(g, z)) and np.array_equal(u, z)


@given(seeds)
@settings(max_examples=20)
def test_phi_output_is_plant_of_input(seed):
    g, k = loop(seed)
    v, d = signals(seed)
    phi = extract_phi(g, k)
    y, u = phi(v, d)
    assert np.allclose(phi.psi_y_o(v, d), evaluate(g, u), atol=1e-12)


@given(seeds)
@settings(max_examples=20)
def test_controller_recovered_through_inverse(seed):
    g, k = loop(seed)
    v, d = signals(seed)
    phi = extract_phi(g, k)
    y, u = phi(v, d)
    v2, d2 = invert_two_port(phi.psi, y, u)
    assert np.allclose(evaluate(k, y), phi.psi_u_o(v2, d2), atol=1e-10)
    assert np.allclose(u - d, evaluate(k, y), atol=1e-12)


@given(seeds)
@settings(max_examples=20)
def test_inverse_roundtrip(seed):
    g, k = loop(seed)
    v, d = signals(seed)
    phi = extract_phi(g, k)
    v2, d2 = invert_two_port(phi.psi, *phi(v, d))
    assert max(np.abs(v2 - v).max(), np.abs(d2 - d).max()) < 1e-10


def test_zero_m_gives_open_loop(rng):
    g, _ = loop(3)
    m = ZeroOperator((2, 2), 2, (C, S))
    v, d = rng.normal(size=(9, 2)), rng.normal(size=(9, 2))
    maps = build_psi_from_m(g, m)
    y, u = maps(v, d)
    assert np.array_equal(maps.psi_u_o(v, d), np.zeros_like(d))
    assert np.allclose(y, evaluate(g, d) + v, atol=1e-15)
    assert np.array_equal(evaluate(controller_from_m(g, m), y), np.zeros_like(y))


@given(seeds)
@settings(max_examples=20)
def test_rebuild_from_phi_uo(seed):
    g, k = loop(seed)
    v, d = signals(seed)
    y, u = extract_phi(g, k)(v, d)
    y2, u2 = build_psi_from_m(g, ClosedLoopUo(g, k))(v, d)
    assert max(np.abs(y2 - y).max(), np.abs(u2 - u).max()) < 1e-10


@given(seeds)
@settings(max_examples=20)
def test_s_map_is_idempotent(seed):
    g = random_strict_operator(2, 2, seed=seed)
    m = random_two_port((2, 2), 2, seed=seed + 3)
    v, d = signals(seed)
    s = SMap(g, m)
    once = evaluate(s, v, d)
    twice = evaluate(s, once[:, :2], once[:, 2:])
    assert np.allclose(twice, once, atol=1e-10)


@given(seeds)
@settings(max_examples=20)
def test_controller_from_m_reproduces_maps(seed):
    g = random_strict_operator(2, 2, seed=seed)
    m = random_two_port((2, 2), 2, seed=seed + 3)
    v, d = signals(seed)
    y, u = simulate_closed_loop(g, controller_from_m(g, m), v, d)
    y2, u2 = build_psi_from_m(g, m)(v, d)
    assert max(np.abs(y2 - y).max(), np.abs(u2 - u).max()) < 1e-10


def test_controller_from_m_horizon_cap():
    g = random_strict_operator(1, 1, seed=0)
    k = controller_from_m(g, ZeroOperator((1, 1), 1, (C, S)), t_max=3)
    with pytest.raises(HorizonError):
        evaluate(k, np.zeros((6, 1)))


def test_lti_achievability_with_random_plant():
    from boostctl.checks import lti_cross_check
    assert lti_cross_check(horizon=12, seed=11) < 1e-9
    assert random_stable_lti(2, 1, 1, seed=0).dims == (2, 1, 1)

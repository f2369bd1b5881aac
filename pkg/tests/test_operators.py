import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boostctl.operators import (C, S, CausalityError, Compose, Delay, DimensionError, Identity, StaticGain,
                                StaticMap, Stack, Sum, ZeroOperator, causality_violations, compose,
                                evaluate, invert_feedthrough, invert_two_port, op_neg, op_sum)
from boostctl.plants import LtiPlant, lti_toeplitz
from boostctl.randops import random_causal_operator, random_strict_operator, random_two_port

seeds = st.integers(0, 10_000)


def col(*xs):
    return np.array(xs, dtype=float)[:, None]


def test_identity_evaluation(rng):
    x = rng.normal(size=(7, 3))
    assert np.array_equal(evaluate(Identity(3), x), x)


def test_unit_delay_shifts():
    assert np.array_equal(evaluate(Delay(1), col(1, 2, 3)), col(0, 1, 2))


def test_lti_impulse_response_matches_toeplitz():
    p = LtiPlant([[0.5]], [[1.0]], [[1.0]])
    u = col(1, 0, 0, 0)
    y = evaluate(p.operator(), u)
    mat, free = lti_toeplitz(p, 3)
    assert np.allclose(y.ravel(), mat @ u.ravel() + free, atol=1e-15)
    assert np.allclose(y.ravel(), [0, 1, 0.5, 0.25])


def test_dimension_mismatch_is_typed():
    with pytest.raises(DimensionError):
        evaluate(Identity(2), np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        evaluate(Identity(2), np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        Compose(Identity(2), Identity(3))


@given(seeds)
def test_compose_identity_is_neutral(seed):
    g = random_strict_operator(2, 2, seed=seed)
    x = np.random.default_rng(seed).normal(size=(9, 2))
    assert np.allclose(evaluate(compose(Identity(2), g), x), evaluate(g, x), atol=0)


def test_delay_delay_is_two_step_delay():
    out = evaluate(compose(Delay(1), Delay(1)), col(1, 2, 3, 4))
    assert np.array_equal(out, col(0, 0, 1, 2))
    assert compose(Delay(1), Delay(1)).causality == (S,)


@given(seeds)
def test_compose_equals_two_pass_evaluation(seed):
    lti = LtiPlant([[0.3, 0.1], [0.0, -0.4]], [[1.0], [0.5]], [[1.0, 1.0]]).operator()
    th = StaticMap(np.tanh, 1, 1)
    x = np.random.default_rng(seed).normal(size=(12, 1))
    assert np.allclose(evaluate(compose(th, lti), x), np.tanh(evaluate(lti, x)), atol=1e-15)


@given(seeds)
def test_causal_after_causal_chain(seed):
    a, b = random_causal_operator(2, 2, seed=seed), random_causal_operator(2, 2, seed=seed + 1)
    x = np.random.default_rng(seed).normal(size=(8, 2))
    assert np.allclose(evaluate(compose(a, b), x), evaluate(a, evaluate(b, x)), atol=1e-14)


def test_sum_with_negation_is_zero(rng):
    g = random_causal_operator(2, 2, seed=3)
    x = rng.normal(size=(10, 2))
    assert np.allclose(evaluate(op_sum(g, op_neg(g.clone())), x), 0.0, atol=1e-15)


def test_identity_plus_identity_is_gain_two(rng):
    x = rng.normal(size=(5, 2))
    assert np.array_equal(evaluate(Sum(Identity(2), Identity(2)), x), evaluate(StaticGain(2.0, 2), x))


def test_causality_class_algebra():
    g = random_strict_operator(2, 2, seed=0)
    q = random_causal_operator(2, 2, seed=1)
    assert Compose(g, q).causality == (S,)
    assert Compose(q, g).causality == (S,)
    assert Compose(q, q.clone()).causality == (C,)
    assert Sum(g, q).causality == (C,)
    assert Sum(g, g.clone()).causality == (S,)
    assert Stack(g, q).out_dim == 4


@given(seeds)
def test_strict_slots_ignore_current_sample(seed):
    assert causality_violations(random_strict_operator(2, 1, seed=seed), seed=seed) == []
    assert causality_violations(random_two_port((2, 2), 2, seed=seed), seed=seed) == []
    assert causality_violations(Compose(random_strict_operator(2, 2, seed=seed),
                                        random_causal_operator(2, 2, seed=seed)), seed=seed) == []


@given(seeds)
def test_reset_replay_is_deterministic(seed):
    g = random_strict_operator(2, 2, seed=seed)
    x = np.random.default_rng(seed).normal(size=(10, 2))
    a = evaluate(g, x)
    b = evaluate(g, x)
    assert np.array_equal(a, b)


def test_clone_is_independent(rng):
    g = random_causal_operator(2, 2, seed=0)
    g.step(rng.normal(size=2))
    h = g.clone()
    h.step(rng.normal(size=2))
    assert g.t == 1 and h.t == 2


def test_invert_identity_and_delay():
    a = col(1, 1, 1)
    assert np.array_equal(invert_feedthrough(Identity(1), a), a)
    up = Sum(Identity(1), Delay(1))
    b = invert_feedthrough(up, a)
    assert np.array_equal(b, col(1, 0, 1))
    assert np.array_equal(evaluate(up, b), a)


def test_invert_rejects_direct_feedthrough():
    with pytest.raises(CausalityError):
        invert_feedthrough(StaticGain(2.0, 1), col(1, 2))
    with pytest.raises(CausalityError):
        invert_feedthrough(Sum(Identity(2), random_causal_operator(2, 2, seed=0)), np.zeros((3, 2)))


@given(seeds)
def test_invert_feedthrough_roundtrip(seed):
    g, q = random_strict_operator(2, 2, seed=seed), random_causal_operator(2, 2, seed=seed + 7)
    up = Sum(Identity(2), Compose(g, q))
    b = np.random.default_rng(seed).normal(size=(16, 2))
    assert np.max(np.abs(invert_feedthrough(up, evaluate(up, b)) - b)) < 1e-10


def test_invert_two_port_identity(rng):
    class Pass(ZeroOperator):
        def _step(self, v, d):
            return np.concatenate([v, d], axis=-1)

    y, u = rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
    v, d = invert_two_port(Pass((2, 1), 3, (C, C)), y, u)
    assert np.array_equal(v, y) and np.array_equal(d, u)


def test_scalar_gain_needs_dimension():
    with pytest.raises(ValueError):
        StaticGain(1.0)

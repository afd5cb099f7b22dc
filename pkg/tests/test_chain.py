import numpy as np
import pytest

from mfswitch.catalog import ScalarFunction
from mfswitch.chain import (
    IrreducibilityError,
    RateFunction,
    StepSizeError,
    TwoScaleSpec,
    aggregate_chain_law,
    averaged_generator,
    block_stationary,
    build_epsilon_generator,
    check_step,
    extended_rates,
    is_irreducible,
    sample_chain_path,
    stationary_distribution,
    validate_generator,
)
from mfswitch.measure import DiscreteLaw


def test_validate_generator():
    assert validate_generator([[-1.0, 1.0], [2.0, -2.0]])
    rep = validate_generator([[-1.0, 1.0], [2.0, -1.0]])
    assert not rep and "row 1" in rep.message
    assert not validate_generator([[1.0, -1.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        validate_generator(np.zeros((2, 3)))


def test_stationary_two_state():
    v = stationary_distribution([[-1.0, 1.0], [3.0, -3.0]])
    np.testing.assert_allclose(v, [0.75, 0.25], atol=1e-14)


def test_stationary_reducible_raises():
    G = np.zeros((2, 2))
    assert not is_irreducible(G)
    with pytest.raises(IrreducibilityError):
        stationary_distribution(G)


def test_stationary_matches_eigenvector(rng):
    for _ in range(20):
        G = rng.uniform(0.1, 2.0, size=(4, 4))
        np.fill_diagonal(G, 0.0)
        np.fill_diagonal(G, -G.sum(axis=1))
        v = stationary_distribution(G)
        w, vecs = np.linalg.eig(G.T)
        k = np.argmin(np.abs(w))
        ref = np.real(vecs[:, k])
        ref /= ref.sum()
        np.testing.assert_allclose(v, ref, atol=1e-12)


def test_averaged_generator_trading():
    spec = TwoScaleSpec.trading(1.0, 2.0, 0.3, 0.7, 0.1)
    np.testing.assert_array_equal(averaged_generator(spec), [[-0.3, 0.3], [0.7, -0.7]])


def test_epsilon_generator_structure():
    spec = TwoScaleSpec.trading(1.0, 2.0, 0.3, 0.7, 0.5)
    G = build_epsilon_generator(spec)
    assert validate_generator(G)
    np.testing.assert_allclose(G[0, 1], 2.0)
    np.testing.assert_allclose(G[0, 2], 0.3)
    with pytest.raises(ValueError):
        build_epsilon_generator(spec.with_epsilon(0.0))


def test_block_stationary_and_aggregation():
    spec = TwoScaleSpec.trading(1.0, 3.0, 0.3, 0.7)
    v = block_stationary(spec)
    np.testing.assert_allclose(v[0], [0.75, 0.25])
    np.testing.assert_allclose(aggregate_chain_law(spec, [0.1, 0.2, 0.3, 0.4]), [0.3, 0.7])


def test_block_constant_chain_reduces_without_slow_part():
    spec = TwoScaleSpec([2], [np.array([[-1.0, 1.0], [1.0, -1.0]])], np.zeros((2, 2)))
    np.testing.assert_array_equal(averaged_generator(spec), [[0.0]])


def test_extended_rates_quadratic():
    rf = RateFunction(2, {(0, 1): ScalarFunction("quadratic", (1.0, 0.0, 0.0))})
    m = DiscreteLaw(np.array([[1.0], [3.0]]), np.array([0, 0]), np.array([0.5, 0.5]))
    lam = extended_rates(rf, m)
    assert lam[0, 1] == 5.0
    assert lam[0, 0] == -5.0
    assert np.all(lam[1] == 0.0)


def test_rate_function_catalog_guard():
    with pytest.raises(ValueError):
        RateFunction(2, {(0, 1): ScalarFunction("exp", (1.0, 1.0))})
    with pytest.raises(ValueError):
        RateFunction(2, {(0, 0): ScalarFunction("constant", (1.0,))})
    neg = RateFunction(2, {(0, 1): ScalarFunction("affine_pos", (1.0, 0.0)), (1, 0): ScalarFunction("quadratic", (-1.0, 0.0, 0.0))})
    assert not neg.check_domain(np.array([1.0, 2.0]))


def test_step_guard():
    G = np.array([[-10.0, 10.0], [1.0, -1.0]])
    check_step(G, 0.05)
    with pytest.raises(StepSizeError):
        check_step(G, 0.06)


def test_sample_path_occupancy_matches_stationary():
    G = np.array([[-1.0, 1.0], [2.0, -2.0]])
    path = sample_chain_path(G, [1.0, 0.0], 4000.0, 0.05, seed=3)
    np.testing.assert_allclose(path.occupancy, [2 / 3, 1 / 3], atol=0.02)
    again = sample_chain_path(G, [1.0, 0.0], 4000.0, 0.05, seed=3)
    np.testing.assert_array_equal(path.states, again.states)


def test_sample_path_callable_rates():
    G = np.array([[-1.0, 1.0], [2.0, -2.0]])
    a = sample_chain_path(G, [0.5, 0.5], 10.0, 0.01, seed=1)
    b = sample_chain_path(lambda k, t, s: G, [0.5, 0.5], 10.0, 0.01, seed=1)
    np.testing.assert_array_equal(a.states, b.states)

import numpy as np
import pytest

from mfswitch.catalog import ScalarFunction
from mfswitch.functional import eval_functional, vi_residual
from mfswitch.measure import DiscreteLaw, apply_kernel, is_dominated
from mfswitch.trading import (
    ReductionError,
    TradingExampleSpec,
    cancellation_defect,
    classify_action,
    closed_form_intervention,
    example_residual,
    example_value,
    limit_reduction,
    strategy_table,
    target_kernel,
    threshold_order,
)

L = np.array([0.5, 0.5])


def test_value_examples(two_state, law_from_moments):
    spec = TradingExampleSpec.two_state(1.0, [2.0, 4.0], [2.0, 1.5])
    m = law_from_moments(3.0, 1.0)
    assert example_value(spec, 0.0, m, [1.0, 0.0]) == 3.0
    assert example_value(spec, 1.0, m, L) == 0.0
    assert example_value(two_state, 0.0, m, L) == pytest.approx(eval_functional(two_state.candidate(), 0.0, m, L), abs=1e-15)


def test_residual_probe(two_state, law_from_moments):
    m = law_from_moments(3.0, 1.0)
    closed = example_residual(two_state, 0.0, m, L)
    assert closed.diffusion == 0.5
    assert closed.obstacle_gap >= 0.0
    coeffs = two_state.coefficients()
    generic = vi_residual(two_state.candidate(), 0.0, m, L, coeffs, two_state.rate_function(), two_state.costs())
    assert generic.diffusion == pytest.approx(0.5, abs=1e-8)
    # the grid search moves at least 1/K**2 of one atom, so it sits just above the x -> 0 limit
    assert closed.obstacle_gap <= generic.obstacle_gap <= closed.obstacle_gap + 0.5 * 4.0 / 400


def test_residual_zero_inside_thresholds(two_state, law_from_moments):
    assert example_residual(two_state, 0.2, law_from_moments(1.5, 1.0), L).diffusion == 0.0


def test_constant_functional_subsolution(two_state, law_from_moments):
    from mfswitch.functional import CylindricalFunctional, Term
    from mfswitch.catalog import identity
    from mfswitch.model import Constant

    u = CylindricalFunctional([(None, identity())], [Term("poly", 0, [[1.0], [1.0]])], n_chain=2)
    coeffs = two_state.coefficients()
    coeffs.reward = Constant(0.7, n_chain=2, vector=False)
    res = vi_residual(u, 0.0, law_from_moments(3.0, 1.0), L, coeffs, two_state.rate_function(), two_state.costs())
    assert res.diffusion == pytest.approx(-0.7, abs=1e-15)


def test_defect_identity_with_rates(law_from_moments):
    spec = TradingExampleSpec.two_state(1.0, [2.0, 4.0], [2.0, 1.5], mu1=0.4, mu2=0.9)
    coeffs = spec.coefficients(drift=0.3, sigma=0.5)
    for v1, v0 in [(3.0, 1.0), (1.0, 1.0), (5.0, 0.5)]:
        m = law_from_moments(v1, v0)
        generic = vi_residual(spec.candidate(), 0.1, m, L, coeffs, spec.rate_function(), spec.costs())
        closed = example_residual(spec, 0.1, m, L)
        defect = cancellation_defect(spec, 0.1, m, L, coeffs)
        assert generic.diffusion + defect == pytest.approx(closed.diffusion, abs=1e-12)


def test_intervention_closed_form_is_no_move_limit(two_state):
    for v1, v0 in [(3.0, 1.0), (0.5, 0.5), (6.0, 3.0)]:
        u = min(v1, 2.0) + min(v0, 2.0) + min(v1, 4.0) + min(v0, 1.5)
        assert closed_form_intervention(two_state, v1, v0, L) == pytest.approx(0.5 * u, abs=1e-15)


def test_classify_examples(two_state, law_from_moments):
    m = law_from_moments(3.0, 1.0)
    a = classify_action(two_state, m, 0)
    assert len(a) == 1 and a[0].long == "switch-out" and a[0].long_target == 2.0
    b = classify_action(two_state, m, 1)[0]
    assert (b.long, b.short) == ("keep", "keep")
    edge = classify_action(two_state, law_from_moments(2.0, 1.0), 0)[0]
    assert edge.long == "keep"
    mixed = classify_action(two_state, m, L)
    assert [x.weight for x in mixed] == [0.5, 0.5]


def test_target_kernel_hits_threshold(two_state, law_from_moments):
    m = law_from_moments(3.0, 1.0)
    K = target_kernel(two_state, m, 0)
    mp = apply_kernel(m, K)
    v1, _ = two_state.moments(mp)
    assert abs(v1 - 2.0) <= 1e-9
    assert is_dominated(mp, m)[0]


def test_spec_validation():
    with pytest.raises(ValueError):
        TradingExampleSpec.two_state(1.0, [4.0, 2.0], [2.0, 1.5])
    with pytest.raises(ValueError):
        TradingExampleSpec.two_state(1.0, [2.0, 4.0], [0.0, 1.5])
    with pytest.raises(ValueError):
        TradingExampleSpec.two_state(1.0, [2.0, 4.0], [2.0, 1.5], psi=ScalarFunction("affine", (1.0, -1.0)))


def test_strategy_nesting(two_state, four_state):
    grid = np.linspace(0.0, 5.0, 21)
    for spec in (two_state, four_state):
        tab = strategy_table(spec, grid, grid)
        assert tab.nesting_violations(threshold_order(spec)) == 0
        assert len(tab.rows()) == spec.n_chain * 21 * 21
    reversed_order = threshold_order(two_state)[::-1]
    assert strategy_table(two_state, grid, grid).nesting_violations(reversed_order) > 0


def test_degenerate_thresholds_identical_columns():
    spec = TradingExampleSpec.two_state(1.0, [2.0, 2.0], [1.0, 1.0], check_ordering=False)
    tab = strategy_table(spec, np.linspace(0, 4, 9), np.linspace(0, 4, 9))
    np.testing.assert_array_equal(tab.long_set[0], tab.long_set[1])


def test_limit_reduction(law_from_moments):
    spec = TradingExampleSpec.four_state(1.0, [1.0, 1.0, 3.0, 3.0], [3.0, 3.0, 1.0, 1.0], 1.0, 3.0, 0.5, 0.25, 0.1)
    red = limit_reduction(spec)
    np.testing.assert_array_equal(red.generator, [[-0.5, 0.5], [0.25, -0.25]])
    m = law_from_moments(2.0, 2.0)
    fine = example_value(spec, 0.0, m, [0.1, 0.2, 0.3, 0.4])
    assert example_value(red, 0.0, m, [0.3, 0.7]) == pytest.approx(fine, abs=1e-15)


def test_limit_reduction_rejects_mixed_blocks(four_state):
    with pytest.raises(ReductionError):
        limit_reduction(four_state)
    np.testing.assert_allclose(limit_reduction(four_state, "mean").a1, [1.25, 2.75])

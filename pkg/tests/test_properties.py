import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from mfswitch.chain import averaged_generator, stationary_distribution, TwoScaleSpec
from mfswitch.functional import intervention_value
from mfswitch.measure import DiscreteLaw, apply_kernel, is_dominated, wasserstein
from mfswitch.model import CostMatrix
from mfswitch.trading import (
    TradingExampleSpec,
    classify_action,
    closed_form_intervention,
    example_residual,
    example_value,
    strategy_table,
    threshold_order,
)

pos = st.floats(0.05, 5.0, allow_nan=False)
unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def laws(draw, max_atoms=3):
    n = draw(st.integers(1, max_atoms))
    x = draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n))
    modes = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))
    return DiscreteLaw(np.array(x)[:, None], modes, w / w.sum())


@st.composite
def generators(draw, n):
    off = np.array(draw(st.lists(st.floats(0.05, 3.0), min_size=n * n, max_size=n * n))).reshape(n, n)
    np.fill_diagonal(off, 0.0)
    np.fill_diagonal(off, -off.sum(axis=1))
    return off


@settings(max_examples=60, deadline=None)
@given(generators(3))
def test_stationary_is_invariant(G):
    v = stationary_distribution(G)
    assert abs(v.sum() - 1.0) <= 1e-12
    assert np.max(np.abs(v @ G)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(pos, pos, pos, pos, st.floats(1e-3, 1.0))
def test_averaged_generator_ignores_epsilon_and_fast_rates(l1, l2, m1, m2, eps):
    spec = TwoScaleSpec.trading(l1, l2, m1, m2, eps)
    np.testing.assert_allclose(averaged_generator(spec), [[-m1, m1], [m2, -m2]], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(laws(), laws(), laws())
def test_wasserstein_axioms(a, b, c):
    ab, ba = wasserstein(a, b), wasserstein(b, a)
    assert wasserstein(a, a) <= 1e-12
    assert abs(ab - ba) <= 1e-9
    assert wasserstein(a, c) <= ab + wasserstein(b, c) + 1e-9


@settings(max_examples=60, deadline=None)
@given(laws(4), st.data())
def test_kernel_image_is_dominated(m, data):
    p = np.array(data.draw(st.lists(unit, min_size=m.size, max_size=m.size)))
    K = np.zeros((m.size, 2))
    K[np.arange(m.size), m.modes] = 1 - p
    K[np.arange(m.size), 1 - m.modes] += p
    mp = apply_kernel(m, K)
    assert abs(mp.weights.sum() - 1.0) <= 1e-12
    assert is_dominated(mp, m)[0]


def two_state_spec(a1, a0, b1, b0):
    return TradingExampleSpec.two_state(1.0, [a1, a1 + b1], [a0 + b0, a0])


thresholds = st.tuples(pos, pos, pos, pos)


@settings(max_examples=100, deadline=None)
@given(thresholds, pos, pos, unit, unit, unit)
def test_closed_form_gap_nonnegative(th, v1, v0, w, t, s):
    spec = two_state_spec(*th)
    l = np.array([w, 1 - w])
    u = float(np.dot(l, np.minimum(v1, spec.a1) + np.minimum(v0, spec.a0)))
    assert u - closed_form_intervention(spec, v1, v0, l) >= -1e-12
    m = DiscreteLaw.from_atoms([(v1 / 0.5, 1, 0.5), (v0 / 0.5, 0, 0.5)])
    t1, t2 = sorted((t, s))
    assert example_value(spec, t1, m, l) >= example_value(spec, t2, m, l)
    assert example_value(spec, 1.0, m, l) == 0.0
    assert example_residual(spec, min(t1, 0.99), m, l).diffusion >= 0.0


@settings(max_examples=40, deadline=None)
@given(thresholds, pos, pos, unit)
def test_nesting_and_classification(th, v1, v0, w):
    spec = two_state_spec(*th)
    grid = np.linspace(0.0, 8.0, 17)
    assert strategy_table(spec, grid, grid).nesting_violations(threshold_order(spec)) == 0
    m = DiscreteLaw.from_atoms([(v1 / 0.5, 1, 0.5), (v0 / 0.5, 0, 0.5)])
    for act in classify_action(spec, m, [w, 1 - w]):
        assert (act.long == "switch-out") == (v1 > spec.a1[act.q])
        assert (act.short == "switch-out") == (v0 > spec.a0[act.q])


@settings(max_examples=25, deadline=None)
@given(laws(3), st.floats(0.0, 0.3), unit)
def test_intervention_grid_refinement_is_monotone(m, c, w):
    spec = TradingExampleSpec.two_state(1.0, [1.0, 2.0], [2.0, 1.0])
    u = spec.candidate()
    g = CostMatrix.constant(c + 0.01)
    l = [w, 1 - w]
    coarse = intervention_value(u, 0.0, m, l, g, K=3, refine=False)[0]
    fine = intervention_value(u, 0.0, m, l, g, K=6, refine=False)[0]
    assert fine >= coarse - 1e-12

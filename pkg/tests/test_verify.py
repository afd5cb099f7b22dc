import numpy as np
import pytest

from mfswitch.catalog import TimeFactor, identity, square
from mfswitch.chain import TwoScaleSpec
from mfswitch.flow import SwitchPolicy, simulate
from mfswitch.functional import CylindricalFunctional, Term
from mfswitch.measure import DiscreteLaw
from mfswitch.model import Affine, CoefficientSet, Constant, CostMatrix
from mfswitch.trading import TradingExampleSpec
from mfswitch.verify import (
    BudgetError,
    DiscreteInstance,
    ItoAccumulator,
    KinkError,
    dpp_consistency,
    dpp_enumeration_solver,
    dpp_memo_oracle,
    ito_check,
    two_scale_convergence,
)

G = np.array([[-1.0, 1.0], [2.0, -2.0]])
M0 = DiscreteLaw.from_atoms([(0.0, 0, 0.5), (1.0, 1, 0.5)])


def coeffs(drift, sigma):
    z = dict(n_chain=2, n_modes=2)
    return CoefficientSet(drift, Constant(sigma, **z), Constant(0.0, vector=False, **z), Constant(0.0, vector=False, **z), 2)


def test_constant_functional_has_zero_terms():
    u = CylindricalFunctional([(None, identity())], [Term("poly", 0, [2.0])], n_chain=2)
    c = coeffs(Constant(0.3, n_chain=2), 0.5)
    flow = simulate(c, G, None, None, M0, [0.5, 0.5], 50, 0.01, 0.5, seed=1)
    rep = ito_check(u, flow, c, G)
    assert rep.lhs == rep.rhs == rep.residual == 0.0


def test_linear_drift_by_hand():
    mu, dt = 0.4, 0.01
    u = CylindricalFunctional([(1, identity())], [Term("poly", 0, [0.0, 1.0])], n_chain=2)
    c = coeffs(Constant(mu, n_chain=2), 0.0)
    flow = simulate(c, G, None, None, M0, [0.5, 0.5], 20, dt, 1.0, seed=2, initial="atoms")
    rep = ito_check(u, flow, c, G, constant=1.0)
    assert rep.lhs == pytest.approx(0.5 * mu, abs=1e-12)
    assert rep.residual <= 2 * dt * abs(mu)


def test_observer_and_replay_agree():
    u = CylindricalFunctional([(0, square()), (1, identity())], [Term("poly", 0, [0.0, 1.0]), Term("poly", 1, [0.0, 2.0])], n_chain=2)
    c = coeffs(Affine(-1.0, 0.5, n_chain=2), 0.8)
    pol = SwitchPolicy.forced(0.2, [[0.0, 1.0], [1.0, 0.0]])
    acc = ItoAccumulator(u, c, G)
    g = CostMatrix.constant(1.0)
    flow = simulate(c, G, g, pol, M0, [0.5, 0.5], 200, 0.01, 0.5, seed=3, observer=acc)
    live, replay = acc.report(), ito_check(u, flow, c, G)
    assert live.terms() == pytest.approx(replay.terms(), abs=1e-12)
    assert live.measure_jumps != 0.0
    assert live.path_jumps == 0.0


def test_kink_refused():
    spec = TradingExampleSpec.two_state(1.0, [0.5, 0.5], [0.5, 0.5], check_ordering=False)
    c = coeffs(Constant(0.0, n_chain=2), 0.0)
    m0 = DiscreteLaw.from_atoms([(1.0, 0, 0.5), (1.0, 1, 0.5)])
    flow = simulate(c, np.zeros((2, 2)), None, None, m0, [0.5, 0.5], 10, 0.1, 0.5, seed=4, initial="atoms")
    with pytest.raises(KinkError):
        ito_check(spec.candidate(), flow, c, np.zeros((2, 2)), kink_band=1e-6)


def test_dpp_routes_agree(rng):
    for _ in range(3):
        inst = DiscreteInstance.random(rng, n_x=2, n_steps=3)
        m = inst.random_law(rng)
        l = np.array([0.25, 0.75])
        value, actions = dpp_enumeration_solver(inst, 0, m, l)
        assert value == dpp_memo_oracle(inst, 0, m, l)
        assert actions.shape == (3, 2)
        assert dpp_consistency(inst, 0, 1, m, l) == 0.0


def test_dpp_terminal_step():
    rng = np.random.default_rng(0)
    inst = DiscreteInstance.random(rng, n_x=2, n_steps=2)
    m = inst.random_law(rng)
    l = np.array([1.0, 0.0])
    v, a = dpp_enumeration_solver(inst, 2, m, l)
    assert v == pytest.approx(float(np.sum(m * inst.h[:, 0, :].T)), abs=0.0)
    assert a.shape == (0, 2)


def test_dpp_limits():
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError):
        DiscreteInstance.random(rng, n_x=6)
    inst = DiscreteInstance.random(rng, n_x=5, n_steps=5)
    with pytest.raises(BudgetError):
        dpp_enumeration_solver(inst, 0, inst.random_law(rng), [0.5, 0.5])


def test_two_scale_small():
    spec = TwoScaleSpec.trading(1.0, 3.0, 0.5, 0.25)
    ex = TradingExampleSpec.four_state(1.0, [1.0, 1.0, 3.0, 3.0], [3.0, 3.0, 1.0, 1.0], 1.0, 3.0, 0.5, 0.25)
    m = DiscreteLaw.from_atoms([(2.0, 1, 0.5), (4.0, 0, 0.5)])
    tab = two_scale_convergence(spec, [1.0, 0.1], [(0.0, m, [0.25] * 4)], ex, n_steps=20_000, seeds=range(4))
    assert tab.rows.shape == (2, 6)
    np.testing.assert_allclose(tab.rows[:, 4], [3.0, 3.0], rtol=1e-14)
    np.testing.assert_array_equal(tab.rows[:, 5], [0.0, 0.0])
    assert np.all(tab.errors < 0.2)
    with pytest.raises(ValueError):
        two_scale_convergence(spec, [0.1, 1.0])

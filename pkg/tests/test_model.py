import numpy as np
import pytest

from mfswitch.catalog import ScalarFunction, TimeFactor, identity
from mfswitch.measure import DiscreteLaw
from mfswitch.model import (
    Affine,
    CoefficientSet,
    Constant,
    CostMatrix,
    MeanFieldAffine,
    PointFunction,
    SwitchCost,
    TradingReward,
    aggregate_F,
    aggregate_G,
    aggregate_H,
    default_time_grid,
    switch_cost,
    switch_record_from_kernel,
    validate_costs,
)


@pytest.fixture
def law():
    return DiscreteLaw.from_atoms([(1.0, 0, 0.25), (2.0, 1, 0.75)])


def test_coefficient_tables():
    c = Constant([1.0, 2.0], n_chain=2, dim=1)
    assert c(0.0, 1, np.zeros((1, 1)), 0)[0] == 2.0
    a = Affine([[1.0, 2.0]], 0.5, vector=False)
    np.testing.assert_allclose(a(0.0, 0, np.array([[1.0], [2.0]]), 1), [2.5, 4.5])


def test_point_and_mean_field(law):
    p = PointFunction(ScalarFunction("quadratic", (1.0, 0.0, 0.0)), scale=2.0)
    np.testing.assert_allclose(p(0.0, 0, law.x, law.modes), [2.0, 8.0])
    mf = MeanFieldAffine(slope=0.0, intercept=0.0, coupling=1.0, moment_mode=1)
    np.testing.assert_allclose(mf(0.0, 0, law.x, law.modes, law), [[1.5], [1.5]])
    mf_all = MeanFieldAffine(coupling=1.0)
    np.testing.assert_allclose(mf_all(0.0, 0, law.x, law.modes, law)[:, 0], [1.75, 1.75])


def test_trading_reward_per_state(law):
    r = TradingReward(identity(), a1=[1.0, 2.0], a0=[1.0, 0.1])
    expect = np.array([1 + 1 - (0.5 + 0.75), 2 + 0.1 - (0.5 + 0.15)])
    np.testing.assert_allclose(r.per_state(law), expect)


def test_aggregate_F_and_H(law):
    cs = CoefficientSet.zero()
    cs.reward = Constant(3.0, vector=False)
    cs.terminal = PointFunction(identity(), 1.0)
    assert aggregate_F(0.0, law, [1.0], cs) == 3.0
    assert aggregate_H(law, [1.0], cs) == 1.75


def test_cost_matrix_and_triangle():
    g = CostMatrix.constant(1.0, n_modes=3)
    assert validate_costs(g, default_time_grid(1.0), [0.0, 1.0])
    bad = CostMatrix.constant([[0, 1, 3], [1, 0, 1], [1, 1, 0]], n_modes=3)
    rep = validate_costs(bad, [0.0], [0.0])
    assert not rep and "triangle" in rep.message
    with pytest.raises(ValueError):
        CostMatrix(2, {(0, 0): SwitchCost()})


def test_trading_costs_vanish_at_horizon():
    g = CostMatrix.trading(2.0, identity())
    np.testing.assert_allclose(g(1, 0, 1.5, [[2.0]]), [1.0])
    assert g(1, 0, 2.0, [[2.0]])[0] == 0.0
    assert default_time_grid(2.0)[-1] < 2.0
    # two-mode families have no triangle constraint
    assert validate_costs(g, default_time_grid(2.0), [1.0, 3.0])


def test_switch_cost_and_aggregate_G(law):
    g = CostMatrix(2, {(0, 1): SwitchCost(TimeFactor("constant", 2.0)), (1, 0): SwitchCost(psi=identity())})
    K = np.array([[0.5, 0.5], [1.0, 0.0]])
    direct = switch_cost(law, K, 0.0, g)
    assert direct == pytest.approx(0.25 * 0.5 * 2.0 + 0.75 * 1.0 * 2.0)
    rec = switch_record_from_kernel(law, K)
    assert aggregate_G(0.0, rec, g) == pytest.approx(direct, abs=1e-15)

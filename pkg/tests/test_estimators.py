import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mfswitch.chain import TwoScaleSpec
from mfswitch.estimators import ParticleSimulator, TradingRule, TwoScaleAverager, law_from_array, law_to_array
from mfswitch.measure import DiscreteLaw
from mfswitch.model import CoefficientSet, Constant


def test_law_array_round_trip():
    m = DiscreteLaw.from_atoms([(0.5, 0, 0.25), (1.5, 1, 0.75)])
    back = law_from_array(law_to_array(m))
    np.testing.assert_array_equal(back.x, m.x)
    np.testing.assert_array_equal(back.modes, m.modes)
    with pytest.raises(ValueError):
        law_from_array([[0.5, 0.5, 1.0]])


def test_averager():
    est = TwoScaleAverager(TwoScaleSpec.trading(1.0, 3.0, 0.3, 0.7))
    with pytest.raises(NotFittedError):
        est.transform([[0.25] * 4])
    out = est.fit().transform([[0.1, 0.2, 0.3, 0.4]])
    np.testing.assert_allclose(out, [[0.3, 0.7]])
    np.testing.assert_array_equal(est.averaged_generator_, [[-0.3, 0.3], [0.7, -0.7]])
    with pytest.raises(ValueError):
        est.transform([[0.5, 0.5, 0.5, 0.5]])
    assert clone(est).get_params()["spec"].blocks == est.spec.blocks


def test_trading_rule():
    rule = TradingRule(a1=(2.0, 4.0), a0=(2.0, 1.5), regime=0)
    X = np.array([[3.0, 1.0], [2.0, 3.0], [1.0, 1.0], [5.0, 5.0]])
    np.testing.assert_array_equal(rule.fit(X).predict(X), [1, 2, 0, 3])
    np.testing.assert_array_equal(rule.long_set(X), [False, True, True, True])
    assert rule.set_params(regime=1).fit(X).predict(X[:1])[0] == 0
    with pytest.raises(ValueError):
        TradingRule(a1=(1.0,), a0=(1.0,), regime=3).fit(X)


def test_particle_simulator_score():
    c = CoefficientSet(Constant(0.0), Constant(0.0), Constant(2.0, vector=False), Constant(0.0, vector=False))
    sim = ParticleSimulator(c, np.zeros((1, 1)), None, n_particles=10, dt=0.25, horizon=1.0)
    sim.fit(np.array([[1.0, 0.0, 1.0]]))
    assert sim.score() == pytest.approx(2.0, abs=1e-14)
    assert sim.flow_.n_particles == 10

import numpy as np
import pytest

from mfswitch.catalog import ScalarFunction, TimeFactor, as_points, identity, square


@pytest.mark.parametrize(
    "fn",
    [
        ScalarFunction("constant", (2.5,)),
        ScalarFunction("affine", (1.5, -0.5)),
        ScalarFunction("affine_pos", (2.0, 1.0)),
        ScalarFunction("quadratic", (0.5, -1.0, 2.0)),
        ScalarFunction("exp", (1.5, -0.7)),
    ],
)
def test_derivatives_match_differences(fn):
    x = np.array([-0.3, 0.4, 1.7])
    h = 1e-5
    d1 = (fn(x + h) - fn(x - h)) / (2 * h)
    d2 = (fn(x + h) - 2 * fn(x) + fn(x - h)) / h**2
    np.testing.assert_allclose(fn.d1(x), d1, atol=1e-6)
    np.testing.assert_allclose(fn.d2(x), d2, atol=1e-3)


def test_coordinate_selection():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    f = square(coord=1)
    np.testing.assert_allclose(f(x), [4.0, 1.0])
    g = f.grad(x, 2)
    np.testing.assert_allclose(g, [[0.0, 4.0], [0.0, -2.0]])
    np.testing.assert_allclose(f.hess_diag(x, 2), [[0.0, 2.0], [0.0, 2.0]])


def test_round_trip_and_errors():
    f = ScalarFunction("quadratic", (1, 2, 3))
    assert ScalarFunction.from_dict(f.to_dict()) == f
    with pytest.raises(ValueError):
        ScalarFunction("cubic", (1.0,))
    with pytest.raises(ValueError):
        ScalarFunction("affine", (1.0,))


def test_time_factor():
    tf = TimeFactor("remaining", 2.0, 3.0)
    assert tf(1.0) == 4.0
    assert tf.dt(0.3) == -2.0
    assert TimeFactor.from_dict(tf.to_dict()) == tf
    assert TimeFactor()(5.0) == 1.0


def test_as_points_shapes():
    assert as_points(1.0).shape == (1, 1)
    assert as_points([1.0, 2.0]).shape == (2, 1)
    assert as_points([1.0, 2.0], dim=2).shape == (1, 2)
    with pytest.raises(ValueError):
        as_points(np.zeros((3, 2)), dim=1)
    assert identity()(np.array([[3.0]]))[0] == 3.0

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lodfvm.coeffs import Axis, precompute, precompute_all
from lodfvm.errors import ConfigurationError
from lodfvm.grid import GridSpec, SubstrateParams
from lodfvm.oracle import TridiagonalSystem, thomas_reference


def one(D, lam=0.0):
    return SubstrateParams([D], [lam])


def test_three_row_example():
    c = precompute(Axis.X, 3, 1.0, 1.0, one(10.0))
    np.testing.assert_allclose(c.denom[:, 0], [11.0, 21.0 - 100.0 / 11.0, 11.0 - 100.0 / (21.0 - 100.0 / 11.0)], rtol=1e-15)
    np.testing.assert_allclose(c.constant_c[:, 0], [-10.0 / 11.0, -10.0 / (21.0 - 100.0 / 11.0), 0.0], rtol=1e-15)


def test_single_row():
    c = precompute(Axis.Z, 1, 2.0, 0.5, one(4.0, 3.0))
    assert c.denom[0, 0] == pytest.approx(1.0 + 0.5 * 3.0 / 3.0)
    assert c.constant_c[0, 0] == 0.0


def test_pure_decay_rows():
    c = precompute(Axis.Y, 5, 10.0, 0.1, one(0.0, 3.0))
    np.testing.assert_allclose(c.denom[:, 0], 1.1)
    np.testing.assert_array_equal(c.constant_c[:, 0], 0.0)


@pytest.mark.parametrize("args", [(0, 10.0, 0.1), (4, 0.0, 0.1), (4, 10.0, 0.0), (4, -1.0, 0.1)])
def test_validation(args):
    n, delta, dt = args
    with pytest.raises(ConfigurationError):
        precompute(Axis.X, n, delta, dt, one(1.0))


def test_read_only():
    c = precompute(Axis.X, 4, 1.0, 1.0, one(1.0))
    with pytest.raises(ValueError):
        c.denom[0, 0] = 2.0


@settings(max_examples=40)
@given(
    st.integers(1, 40),
    st.floats(1e-3, 1e4),
    st.floats(0.0, 10.0),
)
def test_matches_on_the_fly_thomas(n, k, r3):
    """Precomputed recurrence reproduces an independent per-solve Thomas."""
    subs = SubstrateParams([k], [3.0 * r3])
    c = precompute(Axis.X, n, 1.0, 1.0, subs)
    a, b, cu = c.diagonals(0)
    d = np.linspace(1.0, 2.0, n)
    ref = thomas_reference(TridiagonalSystem(a, b, cu, d))
    x = d.copy()
    x[0] /= c.denom[0, 0]
    for i in range(1, n):
        x[i] = (x[i] - c.lower[0] * x[i - 1]) / c.denom[i, 0]
    for i in range(n - 2, -1, -1):
        x[i] -= c.constant_c[i, 0] * x[i + 1]
    np.testing.assert_allclose(x, ref, rtol=1e-11, atol=1e-14)


def test_stability_bounds():
    for D in (1e-3, 1.0, 1e5, 1e9):
        c = precompute(Axis.X, 64, 10.0, 0.01, one(D, 0.1))
        assert np.all(c.denom >= 1.0)
        assert np.all(np.abs(c.constant_c) < 1.0)


def test_rows_view():
    c = precompute(Axis.X, 6, 1.0, 1.0, one(1.0))
    sub = c.rows(2, 5)
    assert sub.n == 3
    np.testing.assert_array_equal(sub.denom, c.denom[2:5])


def test_precompute_all_substrate_mismatch():
    spec = GridSpec.from_counts(3, 3, 3, 2)
    with pytest.raises(ConfigurationError):
        precompute_all(spec, one(1.0))
    cx, cy, cz = precompute_all(spec, SubstrateParams([1.0, 2.0], [0.0, 0.0]))
    assert (cx.axis, cy.axis, cz.axis) == (Axis.X, Axis.Y, Axis.Z)
    assert cx.denom.shape == (3, 2)

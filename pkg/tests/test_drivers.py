import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermorom.drivers import DriverSeries, circular_encode, driver_at, driver_matrix, pchip_resample, ut_doy
from thermorom.errors import DuplicateEpoch, NonFinite, OutOfRangeEpoch


def _series(n=48, seed=0):
    rng = np.random.default_rng(seed)
    ep = np.arange(n) * 3600.0
    return DriverSeries(ep, 150 + rng.normal(size=n).cumsum(), np.full(n, 140.0), rng.uniform(0, 9, n))


def test_ut_doy_known_epochs():
    # 2000-01-01T06:00Z and 2001-03-01T12:00Z (day 59 of a non-leap year)
    ut, doy = ut_doy(np.array([6 * 3600, (366 + 59) * 86400 + 12 * 3600]))
    assert ut.tolist() == [6.0, 12.0]
    assert doy.tolist() == [0.25, 59.5]


def test_circular_encoding_unit_circle():
    c1, s1, c2, s2 = circular_encode(np.array([0.0, 6.0]), np.array([0.0, 365.25 / 4]))
    assert np.allclose([c1[0], s1[0], c1[1], s1[1]], [1, 0, 0, 1], atol=1e-12)
    assert np.allclose([c2[1], s2[1]], [0, 1], atol=1e-12)


def test_constant_series_constant_indices():
    ep = np.arange(5) * 3600.0
    s = DriverSeries(ep, np.full(5, 120.0), np.full(5, 118.0), np.full(5, 3.0))
    u = driver_matrix(s, np.arange(0, 4 * 3600 + 1, 60))
    assert np.all(u[0] == 120.0) and np.all(u[2] == 3.0)
    assert np.ptp(u[3]) > 0
    assert driver_at(s, 3600).shape == (7,)


def test_knots_reproduced_and_range_checked():
    s = _series()
    res = pchip_resample(s, s.epochs)
    assert np.array_equal(res.values, s.values)
    with pytest.raises(OutOfRangeEpoch):
        pchip_resample(s, [s.epochs[-1] + 1])


def test_validation():
    ep = np.array([0.0, 3600.0, 3600.0])
    with pytest.raises(DuplicateEpoch):
        DriverSeries(ep, np.ones(3), np.ones(3), np.ones(3))
    with pytest.raises(NonFinite):
        DriverSeries(np.arange(3.0), np.array([1, np.nan, 1]), np.ones(3), np.ones(3))


def test_minute_slope_bound():
    s = _series(seed=4)
    u = driver_matrix(s, np.arange(0, s.epochs[-1] + 1, 60))
    max_slope = np.max(np.abs(np.diff(s.kp)) / 3600.0)
    assert np.max(np.abs(np.diff(u[2]))) <= max_slope * 60 * 3


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_monotone_data_monotone_output(seed):
    rng = np.random.default_rng(seed)
    kp = np.sort(rng.uniform(0, 9, 12))
    s = DriverSeries(np.arange(12) * 3600.0, np.full(12, 100.0), np.full(12, 100.0), kp)
    fine = pchip_resample(s, np.linspace(0, 11 * 3600, 2000)).kp
    assert np.all(np.diff(fine) >= -1e-12)

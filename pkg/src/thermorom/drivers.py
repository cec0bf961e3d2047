"""Solar/geomagnetic driver series and the 7-component driver vector.

The vector is ``[f107, f107_bar41, kp, cos(UT), sin(UT), cos(DOY), sin(DOY)]``
with UT on a 24 h period and DOY on a 365.25 day period. Epochs are integer
seconds since 2000-01-01T00:00:00 UTC, no leap seconds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DuplicateEpoch, NonFinite, OutOfRangeEpoch

N_DRIVERS = 7
DRIVER_NAMES = ("f107", "f107_bar41", "kp", "t1", "t2", "t3", "t4")
_EPOCH0 = np.datetime64("2000-01-01T00:00:00", "s")


@dataclass(frozen=True)
class DriverSeries:
    epochs: np.ndarray
    f107: np.ndarray
    f107_bar41: np.ndarray
    kp: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("epochs", "f107", "f107_bar41", "kp"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            arrays[name] = arr
        n = arrays["epochs"].size
        if any(a.size != n for a in arrays.values()):
            raise ValueError("driver arrays must share one length")
        if not all(np.all(np.isfinite(a)) for a in arrays.values()):
            raise NonFinite("driver series contains NaN or inf")
        diffs = np.diff(arrays["epochs"])
        if np.any(diffs == 0):
            raise DuplicateEpoch("driver epochs repeat")
        if np.any(diffs < 0):
            raise ValueError("driver epochs must be increasing")
        if np.any((arrays["kp"] < 0) | (arrays["kp"] > 9)):
            raise ValueError("kp outside [0, 9]")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def values(self) -> np.ndarray:
        return np.vstack([self.f107, self.f107_bar41, self.kp])


def circular_encode(ut_hours, doy):
    """``(cos, sin)`` of UT over 24 h and of DOY over 365.25 days."""
    ut = np.mod(ut_hours, 24.0)
    day = np.mod(doy, 366.0)
    a = 2.0 * np.pi * ut / 24.0
    b = 2.0 * np.pi * day / 365.25
    return np.cos(a), np.sin(a), np.cos(b), np.sin(b)


def ut_doy(epochs):
    """UT hours and fractional day of year (0 at Jan 1 00:00) for epoch seconds."""
    sec = np.asarray(epochs, dtype=np.int64)
    stamps = _EPOCH0 + sec.astype("timedelta64[s]")
    year_start = stamps.astype("datetime64[Y]").astype("datetime64[s]")
    into_year = (stamps - year_start).astype(np.int64)
    ut = np.mod(sec, 86400) / 3600.0
    return ut, into_year / 86400.0


def pchip_resample(series: DriverSeries, grid_epochs) -> DriverSeries:
    """Shape-preserving cubic Hermite resampling of all three indices."""
    grid = np.asarray(grid_epochs, dtype=float)
    if grid.size and (grid.min() < series.epochs[0] or grid.max() > series.epochs[-1]):
        raise OutOfRangeEpoch(
            f"requested [{grid.min()}, {grid.max()}] outside source [{series.epochs[0]}, {series.epochs[-1]}]")
    interp = PchipInterpolator(series.epochs, series.values, axis=1, extrapolate=False)
    vals = interp(grid)
    # knots are reproduced exactly, not to rounding
    hit = np.searchsorted(series.epochs, grid)
    hit = np.clip(hit, 0, series.epochs.size - 1)
    exact = series.epochs[hit] == grid
    vals[:, exact] = series.values[:, hit[exact]]
    return DriverSeries(grid, vals[0], vals[1], np.clip(vals[2], 0.0, 9.0))


def driver_matrix(series: DriverSeries, epochs) -> np.ndarray:
    """7 x m driver vectors at the given epochs."""
    epochs = np.asarray(epochs)
    res = pchip_resample(series, epochs)
    t1, t2, t3, t4 = circular_encode(*ut_doy(epochs))
    return np.vstack([res.f107, res.f107_bar41, res.kp, t1, t2, t3, t4])


def driver_at(series: DriverSeries, epoch) -> np.ndarray:
    return driver_matrix(series, np.array([epoch]))[:, 0]

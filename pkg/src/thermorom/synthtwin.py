"""Synthetic twin: known latent dynamics lifted onto the grid, and virtual satellites.

The truth evolves hourly as

    z[k+1] = A0 z[k] + B0 u[k] + sum_q coef_q z_i z_j + w[k]

and each snapshot is ``lift @ z + mean_field`` in log10 density. Orbits are
kinematic: latitude is a sinusoid of the orbital period, local time sits on
the ascending-node plane (or 12 h away on the descending half) and drifts
slowly, altitude is constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dataio import RawMeasurementRow, measurement_seed
from .drivers import DriverSeries, N_DRIVERS, driver_matrix
from .errors import OutOfRangeEpoch, UnstableTruth
from .grid import GridSpec, SnapshotSeries, TrackMeasurement, mc_noise_variance, trilinear_weights

HOUR = 3600


@dataclass(frozen=True)
class TwinOperators:
    a0: np.ndarray
    b0: np.ndarray
    quad: tuple = ()  # (row, i, j, coef) terms

    def step(self, z, u):
        out = self.a0 @ z + self.b0 @ u
        for row, i, j, coef in self.quad:
            out[row] += coef * z[i] * z[j]
        return out

    def perturbed(self, frac: float, seed: int) -> "TwinOperators":
        """Every coefficient scaled by an independent factor in ``[1 - frac, 1 + frac]``."""
        rng = np.random.default_rng(seed)
        a = self.a0 * (1 + frac * rng.uniform(-1, 1, self.a0.shape))
        b = self.b0 * (1 + frac * rng.uniform(-1, 1, self.b0.shape))
        quad = tuple((r, i, j, c * (1 + frac * rng.uniform(-1, 1))) for r, i, j, c in self.quad)
        return TwinOperators(a, b, quad)


def default_operators(r: int, amplitude: float, seed: int, n_u: int = N_DRIVERS,
                      quad_terms: int = 1) -> TwinOperators:
    """Stable operators with amplitude-scaled steady-state driver response.

    ``A0 = expm(M)`` with hourly decay rates in [0.05, 0.3] and weak rotation, so
    no eigenvalue sits on the negative real axis. ``B0 = (I - A0) G`` where ``G``
    maps a full-scale driver swing (kp 0-9, F10.7 in sfu, unit encodings) to a
    latent excursion of order ``amplitude``.
    """
    rng = np.random.default_rng(seed)
    decay = rng.uniform(0.05, 0.3, r)
    skew = rng.normal(scale=0.05, size=(r, r))
    a0 = scipy.linalg.expm(-np.diag(decay) + (skew - skew.T))
    scales = np.array([1 / 200, 1 / 200, 1 / 9, 0.3, 0.3, 0.3, 0.3])[:n_u]
    gain = rng.normal(size=(r, n_u)) * scales * amplitude
    gain[0, 2] = abs(gain[0, 2]) + amplitude / 9  # storms drive the leading mode
    b0 = (np.eye(r) - a0) @ gain
    quad = []
    for q in range(quad_terms if r > 1 else 0):
        i, j = q % r, (q + 1) % r
        quad.append((q % r, min(i, j), max(i, j), 0.02 / amplitude))
    return TwinOperators(a0, b0, tuple(quad))


def mean_field(grid: GridSpec) -> np.ndarray:
    """Plausible log10 density climatology: exponential fall-off with a diurnal bulge."""
    lt, lat, alt = np.meshgrid(grid.lt_axis, grid.lat_axis, grid.alt_axis, indexing="ij")
    h = (alt - 100.0) / 880.0
    field = -9.0 - 5.5 * h**0.8
    field += 0.15 * h * np.cos(2 * np.pi * (lt - 14.0) / 24.0) * np.cos(np.radians(lat))
    field += 0.05 * np.cos(2 * np.radians(lat))
    return field.ravel()


def smooth_lift(grid: GridSpec, r: int, seed: int) -> np.ndarray:
    """Orthonormal d x r basis of smooth random fields."""
    rng = np.random.default_rng(seed)
    lt, lat, alt = np.meshgrid(grid.lt_axis, grid.lat_axis, grid.alt_axis, indexing="ij")
    h = (alt - 100.0) / 880.0
    phase_lt = 2 * np.pi * lt / 24.0
    s = np.sin(np.radians(lat))
    cols = []
    for _ in range(r):
        f = np.zeros_like(h)
        for _term in range(4):
            k = rng.integers(0, 3)
            lat_poly = np.polynomial.legendre.legval(s, rng.normal(size=3))
            alt_prof = h ** rng.uniform(0.3, 1.5) + rng.normal(scale=0.3)
            f += rng.normal() * np.cos(k * phase_lt + rng.uniform(0, 2 * np.pi)) * lat_poly * alt_prof
        cols.append(f.ravel())
    q, _ = np.linalg.qr(np.column_stack(cols))
    return q


def scenario_drivers(scenario: str, start: int, stop: int, seed: int = 0,
                     storm_onset_h: float = 24.0) -> DriverSeries:
    """Hourly F10.7, 41-day mean F10.7 and kp for ``[start, stop]``.

    ``quiet`` keeps kp near 1.5; ``ramp`` raises kp linearly 1 -> 7; ``storm``
    ramps kp 2 -> 8 -> 2 over 48 h starting ``storm_onset_h`` after ``start``;
    ``excite`` draws random 3-hourly kp and a wandering F10.7 (for identification).
    """
    rng = np.random.default_rng(seed)
    history = 41 * 24
    hours = np.arange(-history, (stop - start) // HOUR + 1)
    t_day = hours / 24.0
    f107 = 150.0 + 20.0 * np.sin(2 * np.pi * (t_day + start / 86400.0) / 27.0)
    if scenario == "excite":
        walk = np.cumsum(rng.normal(scale=2.0, size=hours.size))
        f107 = f107 + walk - walk.mean()
        f107 = np.clip(f107, 65.0, 300.0)
    kernel = np.ones(history) / history
    f107_bar = np.convolve(f107, kernel, mode="full")[:hours.size]
    f107_bar[:history] = f107_bar[history]

    rel = hours.astype(float)
    if scenario == "quiet":
        kp = 1.5 + 0.5 * np.sin(2 * np.pi * rel / 72.0)
    elif scenario == "ramp":
        kp = np.interp(rel, [0, max(rel[-1], 1)], [1.0, 7.0])
    elif scenario == "storm":
        t0 = storm_onset_h
        kp = np.interp(rel, [t0, t0 + 12, t0 + 24, t0 + 48], [2.0, 8.0, 8.0, 2.0])
    elif scenario == "excite":
        knots = np.arange(rel[0], rel[-1] + 3, 3.0)
        kp = np.interp(rel, knots, rng.uniform(0.0, 9.0, knots.size))
    else:
        raise ValueError(f"unknown driver scenario {scenario!r}")
    keep = hours >= 0
    epochs = start + hours * HOUR
    return DriverSeries(epochs[keep], f107[keep], f107_bar[keep], np.clip(kp[keep], 0, 9))


@dataclass(frozen=True)
class TwinSpec:
    grid: GridSpec = field(default_factory=GridSpec)
    r_true: int = 4
    seed: int = 0
    scenario: str = "storm"
    start_epoch: int = 120_528_000  # 2003-10-27T00:00:00Z
    duration_h: int = 96
    burn_in_h: int = 72
    amplitude: float = 30.0
    storm_onset_h: float = 24.0
    process_noise: float = 0.0
    operators: TwinOperators | None = None
    zero_drivers: bool = False
    z0: np.ndarray | None = None

    def resolved_operators(self) -> TwinOperators:
        return self.operators or default_operators(self.r_true, self.amplitude, self.seed)


@dataclass(frozen=True)
class TwinTruth:
    spec: TwinSpec
    snapshots: SnapshotSeries
    latent: np.ndarray
    drivers: DriverSeries
    u: np.ndarray
    lift: np.ndarray
    mean: np.ndarray
    operators: TwinOperators


def generate_truth(spec: TwinSpec) -> TwinTruth:
    """Propagate the latent truth hourly and lift it to log10-density snapshots."""
    ops = spec.resolved_operators()
    rho = np.max(np.abs(np.linalg.eigvals(ops.a0)))
    if not rho < 1.0:
        raise UnstableTruth(f"truth state matrix has spectral radius {rho:.4f}")
    start = spec.start_epoch - spec.burn_in_h * HOUR
    stop = spec.start_epoch + spec.duration_h * HOUR
    series = scenario_drivers(spec.scenario, start, stop, seed=spec.seed,
                              storm_onset_h=spec.burn_in_h + spec.storm_onset_h)
    u = driver_matrix(series, series.epochs)
    u_dyn = np.zeros_like(u) if spec.zero_drivers else u

    rng = np.random.default_rng([spec.seed, 1])
    r = spec.r_true
    n = u.shape[1]
    z = np.empty((r, n))
    z[:, 0] = np.zeros(r) if spec.z0 is None else spec.z0
    limit = 1e6 * max(spec.amplitude, 1.0)
    for k in range(n - 1):
        nxt = ops.step(z[:, k].copy(), u_dyn[:, k])
        if spec.process_noise:
            nxt = nxt + rng.normal(scale=spec.process_noise, size=r)
        if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > limit:
            raise UnstableTruth(f"latent truth diverged at hour {k}")
        z[:, k + 1] = nxt

    keep = slice(spec.burn_in_h, None)
    lift = smooth_lift(spec.grid, r, spec.seed + 7)
    mean = mean_field(spec.grid)
    values = lift @ z[:, keep] + mean[:, None]
    kept_series = DriverSeries(series.epochs[keep], series.f107[keep], series.f107_bar41[keep], series.kp[keep])
    snaps = SnapshotSeries(spec.grid, series.epochs[keep].astype(np.int64), values)
    return TwinTruth(spec, snaps, z[:, keep], kept_series, u[:, keep], lift, mean, ops)


@dataclass(frozen=True)
class OrbitSpec:
    altitude_km: float = 450.0
    inclination_deg: float = 87.35
    period_min: float = 93.7
    phase_rad: float = 0.0
    lt_node_h: float = 10.0
    lt_drift_h_per_day: float = -0.09

    def __post_init__(self):
        if not 100.0 <= self.altitude_km <= 980.0:
            raise ValueError("orbit altitude must lie within [100, 980] km")
        if not self.period_min > 0:
            raise ValueError("orbital period must be positive")


@dataclass(frozen=True)
class Track:
    epochs: np.ndarray
    lat: np.ndarray
    lt: np.ndarray
    alt: np.ndarray

    def __len__(self) -> int:
        return self.epochs.size


def fly_orbit(orbit: OrbitSpec, epochs) -> Track:
    t = np.asarray(epochs, dtype=float)
    arg = 2 * np.pi * t / (orbit.period_min * 60.0) + orbit.phase_rad
    amp = min(orbit.inclination_deg, 90.0)
    lat = amp * np.sin(arg)
    ascending = np.cos(arg) >= 0
    lt = orbit.lt_node_h + orbit.lt_drift_h_per_day * t / 86400.0 + np.where(ascending, 0.0, 12.0)
    return Track(np.asarray(epochs).astype(np.int64), lat, np.mod(lt, 24.0), np.full(t.shape, orbit.altitude_km))


def sample_truth(snapshots: SnapshotSeries, track: Track) -> np.ndarray:
    """log10 truth along the track: tri-linear in space, linear in time."""
    ep = snapshots.epochs
    t = track.epochs
    if t.size and (t.min() < ep[0] or t.max() > ep[-1]):
        raise OutOfRangeEpoch("track extends beyond snapshot coverage")
    hi = np.clip(np.searchsorted(ep, t, side="right"), 1, ep.size - 1)
    lo = hi - 1
    frac = (t - ep[lo]) / (ep[hi] - ep[lo])
    out = np.empty(t.size)
    vals = snapshots.values
    for n in range(t.size):
        w = trilinear_weights(snapshots.grid, track.lat[n], track.lt[n], track.alt[n])
        a = w.weights @ vals[w.indices, lo[n]]
        b = w.weights @ vals[w.indices, hi[n]]
        out[n] = (1.0 - frac[n]) * a + frac[n] * b
    return out


def synthesize_measurements(snapshots: SnapshotSeries, track: Track, rel_err: float = 0.05,
                            seed: int = 0, satellite_id: str = "SAT", n_mc: int = 100,
                            min_var: float = 1e-12) -> list[TrackMeasurement]:
    """Truth along the track with multiplicative ``U(-rel_err, rel_err)`` noise."""
    truth = 10.0 ** sample_truth(snapshots, track)
    out = []
    for n in range(len(track)):
        epoch = int(track.epochs[n])
        key = measurement_seed(seed, epoch, satellite_id)
        eps = np.random.Generator(np.random.Philox(np.random.SeedSequence(key + [1]))).uniform(-rel_err, rel_err)
        rho = truth[n] * (1.0 + eps)
        var = max(min_var, mc_noise_variance(rho, rel_err, n_mc, key))
        out.append(TrackMeasurement(epoch, float(track.lat[n]), float(track.lt[n]), float(track.alt[n]),
                                    float(rho), var, satellite_id))
    return out


def inject_negatives(measurements, fraction: float, seed: int = 0) -> list[RawMeasurementRow]:
    """Raw rows with a ``fraction`` of densities replaced by small negative values."""
    rng = np.random.default_rng(seed)
    rows = []
    for m in measurements:
        rho = -abs(m.rho) * rng.uniform(0.01, 1.0) if rng.uniform() < fraction else m.rho
        rows.append(RawMeasurementRow(float(m.epoch), m.lat, m.lt, m.alt, rho, m.satellite_id))
    return rows

"""Gridded density domain, tri-linear sampling and the log-density observation operator.

Fields are stored flat in LT-major order: the value at local-time bin ``i``,
latitude bin ``j`` and altitude bin ``k`` lives at ``(i * n_lat + j) * n_alt + k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AltitudeOutOfRange,
    DimensionMismatch,
    NonFiniteCoordinate,
    NonPositiveDensity,
)

_SNAP = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Uniform LT x LAT x ALT grid. Local time is periodic over 24 h."""

    n_lt: int = 72
    n_lat: int = 36
    n_alt: int = 45
    lat_min: float = -87.5
    lat_max: float = 87.5
    alt_min: float = 100.0
    alt_max: float = 980.0

    def __post_init__(self):
        if self.n_lt < 1 or self.n_lat < 2 or self.n_alt < 2:
            raise ValueError("grid needs n_lt >= 1 and at least two LAT and ALT nodes")
        if not (self.lat_max > self.lat_min and self.alt_max > self.alt_min):
            raise ValueError("LAT and ALT ranges must be strictly increasing")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_lt, self.n_lat, self.n_alt)

    @property
    def size(self) -> int:
        return self.n_lt * self.n_lat * self.n_alt

    @property
    def lt_axis(self) -> np.ndarray:
        return np.arange(self.n_lt) * (24.0 / self.n_lt)

    @property
    def lat_axis(self) -> np.ndarray:
        return np.linspace(self.lat_min, self.lat_max, self.n_lat)

    @property
    def alt_axis(self) -> np.ndarray:
        return np.linspace(self.alt_min, self.alt_max, self.n_alt)

    def flat_index(self, i, j, k):
        return (np.asarray(i) * self.n_lat + np.asarray(j)) * self.n_alt + np.asarray(k)

    def as_dict(self) -> dict:
        return {
            "n_lt": self.n_lt, "n_lat": self.n_lat, "n_alt": self.n_alt,
            "lat_min": self.lat_min, "lat_max": self.lat_max,
            "alt_min": self.alt_min, "alt_max": self.alt_max,
        }


@dataclass(frozen=True)
class FieldSnapshot:
    """One gridded log10-density state at ``epoch`` (seconds since 2000-01-01 UTC)."""

    grid: GridSpec
    values: np.ndarray
    epoch: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != self.grid.size:
            raise DimensionMismatch(f"snapshot has {values.size} values, grid needs {self.grid.size}")
        if not np.all(np.isfinite(values)):
            raise DimensionMismatch("snapshot values must be finite")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class SparseWeights:
    """Interpolation weights over the flattened grid (at most 8 nonzeros)."""

    indices: np.ndarray
    weights: np.ndarray

    def contract(self, field: np.ndarray) -> float:
        return float(self.weights @ np.asarray(field)[self.indices])

    def dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.indices] = self.weights
        return out


def _bracket(pos: float, n: int, periodic: bool):
    """Lower node, upper node and fractional offset for a position in index units."""
    nearest = round(pos)
    if abs(pos - nearest) < _SNAP:
        pos = float(nearest)
    if periodic:
        lo = int(np.floor(pos))
        frac = pos - lo
        return lo % n, (lo + 1) % n, frac
    lo = min(int(np.floor(pos)), n - 2)
    return lo, lo + 1, pos - lo


def trilinear_weights(grid: GridSpec, lat: float, lt: float, alt: float) -> SparseWeights:
    """Tri-linear interpolation weights at ``(lat, lt, alt)``.

    Latitude is clamped to the grid edge, local time wraps modulo 24 h between
    the last and first LT bins, and altitude outside the grid is an error.
    """
    if not (np.isfinite(lat) and np.isfinite(lt) and np.isfinite(alt)):
        raise NonFiniteCoordinate(f"non-finite coordinate ({lat}, {lt}, {alt})")
    if alt < grid.alt_min or alt > grid.alt_max:
        raise AltitudeOutOfRange(f"altitude {alt} km outside [{grid.alt_min}, {grid.alt_max}]")

    lat = min(max(lat, grid.lat_min), grid.lat_max)
    lt = float(lt) % 24.0

    i0, i1, fi = _bracket(lt * grid.n_lt / 24.0, grid.n_lt, periodic=True)
    j0, j1, fj = _bracket((lat - grid.lat_min) / (grid.lat_max - grid.lat_min) * (grid.n_lat - 1),
                          grid.n_lat, periodic=False)
    k0, k1, fk = _bracket((alt - grid.alt_min) / (grid.alt_max - grid.alt_min) * (grid.n_alt - 1),
                          grid.n_alt, periodic=False)

    acc: dict[int, float] = {}
    for i, wi in ((i0, 1.0 - fi), (i1, fi)):
        for j, wj in ((j0, 1.0 - fj), (j1, fj)):
            for k, wk in ((k0, 1.0 - fk), (k1, fk)):
                w = wi * wj * wk
                if w > 0.0:
                    idx = int(grid.flat_index(i, j, k))
                    acc[idx] = acc.get(idx, 0.0) + w
    idx = np.array(sorted(acc), dtype=np.int64)
    return SparseWeights(idx, np.array([acc[i] for i in idx]))


@dataclass(frozen=True)
class ObsOperator:
    """Affine map from latent state to log10 density at one location.

    ``h_row @ z + mu_scalar`` is the predicted log10 density.
    """

    h_row: np.ndarray
    mu_scalar: float
    weights: SparseWeights
    location: tuple[float, float, float]


def build_obs_operator(basis, grid: GridSpec, lat: float, lt: float, alt: float) -> ObsOperator:
    w = np.asarray(basis.w)
    mu0 = np.asarray(basis.mu0)
    if w.shape[0] != grid.size or mu0.shape[0] != grid.size:
        raise DimensionMismatch(f"basis has {w.shape[0]} rows, grid has {grid.size} nodes")
    phi = trilinear_weights(grid, lat, lt, alt)
    h_row = phi.weights @ w[phi.indices]
    mu = float(phi.weights @ mu0[phi.indices])
    return ObsOperator(h_row, mu, phi, (float(lat), float(lt), float(alt)))


def predict_log_density(op: ObsOperator, z: np.ndarray) -> float:
    return float(op.h_row @ np.asarray(z)) + op.mu_scalar


def reconstructed_density(op: ObsOperator, z: np.ndarray, floor: float = 0.0,
                          strict: bool = False) -> float:
    """Linear-space density at the operator location.

    The basis represents log10 density, so the value is always positive; ``floor``
    lets long propagations flag densities that fall below a physical minimum.
    """
    rho = 10.0 ** predict_log_density(op, z)
    if strict and not rho > floor:
        raise NonPositiveDensity(f"reconstructed density {rho:g} <= floor {floor:g}")
    return rho


def positivity_flag(op: ObsOperator, z: np.ndarray, floor: float = 0.0) -> bool:
    """True when the reconstructed linear density is above ``floor``."""
    return reconstructed_density(op, z) > floor


def mc_noise_variance(rho_meas: float, rel_err: float = 0.05, n_mc: int = 100, seed=0) -> float:
    """Monte-Carlo variance of log10 density under uniform relative sensor error.

    Draws ``n_mc`` factors ``1 + eps`` with ``eps ~ U(-rel_err, rel_err)`` from a
    counter-based generator keyed by ``seed`` and returns the sample variance of
    ``log10(rho_meas * (1 + eps))``. The log of the density itself is a constant
    shift, so only the perturbation enters the variance and the result does not
    depend on ``rho_meas``.
    """
    if not rho_meas > 0:
        raise NonPositiveDensity(f"measured density must be positive, got {rho_meas}")
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    eps = rng.uniform(-rel_err, rel_err, size=n_mc)
    return float(np.var(np.log10(1.0 + eps), ddof=1))


@dataclass(frozen=True)
class TrackMeasurement:
    """One preprocessed along-track sample. ``sigma_v2`` is a log10-density variance."""

    epoch: int
    lat: float
    lt: float
    alt: float
    rho: float
    sigma_v2: float
    satellite_id: str

    @property
    def log_rho(self) -> float:
        return float(np.log10(self.rho))


@dataclass(frozen=True)
class SnapshotSeries:
    """Time-ordered log10-density fields, stored as a d x m matrix."""

    grid: GridSpec
    epochs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        epochs = np.asarray(self.epochs, dtype=np.int64)
        if values.ndim != 2 or values.shape[0] != self.grid.size or values.shape[1] != epochs.size:
            raise DimensionMismatch(f"values {values.shape} inconsistent with grid {self.grid.size} "
                                    f"and {epochs.size} epochs")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "epochs", epochs)

    def __len__(self) -> int:
        return self.epochs.size

    def snapshot(self, k: int) -> FieldSnapshot:
        return FieldSnapshot(self.grid, self.values[:, k], int(self.epochs[k]))

    @property
    def cadence_s(self) -> float:
        steps = np.unique(np.diff(self.epochs))
        if steps.size != 1:
            raise DimensionMismatch("snapshot epochs are not uniformly spaced")
        return float(steps[0])

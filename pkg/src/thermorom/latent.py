"""Rank-r PCA basis of log10-density snapshots."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData, DimensionMismatch, NonFinite, RankTooLarge
from .grid import GridSpec


@dataclass(frozen=True)
class LatentBasis:
    """Orthonormal d x r projection ``w`` with mean field ``mu0``.

    Attributes
    ----------
    w : ndarray, shape (d, r)
        Leading principal directions, ordered by explained variance.
    mu0 : ndarray, shape (d,)
        Column mean of the training snapshots.
    explained : ndarray, shape (r,)
        Fraction of total centered variance captured by each direction.
    n_snapshots : int
        Number of training snapshots.
    """

    w: np.ndarray
    mu0: np.ndarray
    grid: GridSpec | None = None
    explained: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_snapshots: int = 0

    @property
    def r(self) -> int:
        return self.w.shape[1]

    @property
    def d(self) -> int:
        return self.w.shape[0]


def _fix_signs(u: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every column positive, for reproducible output
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def fit_basis(snapshots: np.ndarray, r: int = 10, grid: GridSpec | None = None,
              gram_ratio: float = 4.0) -> LatentBasis:
    """Fit the mean field and top-``r`` principal directions of a d x m snapshot matrix.

    When ``d > gram_ratio * m`` the right singular vectors come from the m x m
    Gram matrix; the left vectors are then recovered from a thin SVD of the
    d x r image, which keeps them orthonormal to machine precision.
    """
    x = np.asarray(snapshots, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch("snapshots must be a d x m matrix")
    d, m = x.shape
    if grid is not None and grid.size != d:
        raise DimensionMismatch(f"snapshot rows {d} != grid size {grid.size}")
    if not np.all(np.isfinite(x)):
        raise NonFinite("snapshots contain non-finite values")
    if r < 1 or r > min(d, m):
        raise RankTooLarge(f"rank {r} not in [1, min(d, m) = {min(d, m)}]")

    mu0 = x.mean(axis=1)
    xc = x - mu0[:, None]
    total = float(np.sum(xc * xc))
    if total == 0.0:
        raise DegenerateData("snapshots have zero variance")

    if d > gram_ratio * m:
        evals, evecs = np.linalg.eigh(xc.T @ xc)
        order = np.argsort(evals)[::-1][:r]
        y = xc @ evecs[:, order]
        u, s, _ = np.linalg.svd(y, full_matrices=False)
    else:
        u, s, _ = np.linalg.svd(xc, full_matrices=False)
        u, s = u[:, :r], s[:r]

    if s[-1] <= 1e-12 * s[0]:
        raise DegenerateData(f"retained direction {r} carries no variance")
    w = _fix_signs(u)
    return LatentBasis(w=w, mu0=mu0, grid=grid, explained=s**2 / total, n_snapshots=m)


def project(basis: LatentBasis, x_full: np.ndarray) -> np.ndarray:
    """Latent coordinates ``W^T (x - mu0)``; accepts a vector or a d x m matrix."""
    x = np.asarray(x_full, dtype=float)
    if x.shape[0] != basis.d:
        raise DimensionMismatch(f"field has {x.shape[0]} rows, basis has {basis.d}")
    if x.ndim == 1:
        return basis.w.T @ (x - basis.mu0)
    return basis.w.T @ (x - basis.mu0[:, None])


def reconstruct(basis: LatentBasis, z: np.ndarray) -> np.ndarray:
    """Full field ``W z + mu0``; accepts a vector or an r x m matrix."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] != basis.r:
        raise DimensionMismatch(f"latent has {z.shape[0]} rows, basis rank is {basis.r}")
    if z.ndim == 1:
        return basis.w @ z + basis.mu0
    return basis.w @ z + basis.mu0[:, None]

"""Polynomial candidate library over (z, u), its standardization and Jacobian.

Term order is fixed: ``1, z_i, z_i z_j (i <= j), u_k, u_k u_l (k <= l), z_i u_k``
with pairs enumerated row-major and the cross block ``z``-major. With
``max_degree=1`` only the bias and linear blocks remain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFinite

FROZEN_STD = 1e-12


@dataclass(frozen=True)
class LibrarySpec:
    r: int
    n_u: int
    include_bias: bool = True
    max_degree: int = 2

    def __post_init__(self):
        if self.r < 1 or self.n_u < 0:
            raise ValueError("need r >= 1 and n_u >= 0")
        if self.max_degree not in (1, 2):
            raise ValueError("max_degree must be 1 or 2")

    @property
    def block_sizes(self) -> dict[str, int]:
        r, n = self.r, self.n_u
        quad = self.max_degree == 2
        return {
            "bias": int(self.include_bias),
            "z": r,
            "zz": r * (r + 1) // 2 if quad else 0,
            "u": n,
            "uu": n * (n + 1) // 2 if quad else 0,
            "zu": r * n if quad else 0,
        }

    @property
    def p(self) -> int:
        return sum(self.block_sizes.values())

    @property
    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in self.block_sizes.items():
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def nl_index(self) -> np.ndarray:
        """Positions of the genuinely nonlinear terms (zz, uu, zu)."""
        s = self.slices
        return np.concatenate([np.arange(p.start, p.stop) for p in (s["zz"], s["uu"], s["zu"])]).astype(int)

    @property
    def p_nl(self) -> int:
        return len(self.nl_index)

    def term_names(self, z_name: str = "z", u_name: str = "u") -> list[str]:
        names = ["1"] if self.include_bias else []
        names += [f"{z_name}{i}" for i in range(self.r)]
        if self.max_degree == 2:
            names += [f"{z_name}{i}*{z_name}{j}" for i, j in zip(*np.triu_indices(self.r))]
        names += [f"{u_name}{k}" for k in range(self.n_u)]
        if self.max_degree == 2:
            names += [f"{u_name}{k}*{u_name}{l}" for k, l in zip(*np.triu_indices(self.n_u))]
            names += [f"{z_name}{i}*{u_name}{k}" for i in range(self.r) for k in range(self.n_u)]
        return names

    # index pairs for the product blocks
    @property
    def _zz(self):
        return np.triu_indices(self.r)

    @property
    def _uu(self):
        return np.triu_indices(self.n_u)

    @property
    def _zu(self):
        return np.repeat(np.arange(self.r), self.n_u), np.tile(np.arange(self.n_u), self.r)


def enumerate_terms(r: int, n_u: int, max_degree: int = 2, include_bias: bool = True) -> LibrarySpec:
    return LibrarySpec(r=r, n_u=n_u, include_bias=include_bias, max_degree=max_degree)


@dataclass(frozen=True)
class FeatureScaler:
    """Per-term centering and scaling. Frozen terms had (near) zero training spread."""

    mean: np.ndarray
    std: np.ndarray
    frozen: np.ndarray

    @classmethod
    def identity(cls, p: int) -> "FeatureScaler":
        return cls(np.zeros(p), np.ones(p), np.zeros(p, dtype=bool))

    @classmethod
    def fit(cls, spec: LibrarySpec, raw: np.ndarray, standardize: bool = True) -> "FeatureScaler":
        """Fit from a raw p x m library matrix. The bias row keeps mean 0 and std 1."""
        raw = np.asarray(raw, dtype=float)
        if raw.shape[0] != spec.p:
            raise DimensionMismatch(f"library matrix has {raw.shape[0]} rows, spec has {spec.p}")
        mean = raw.mean(axis=1)
        std = raw.std(axis=1)
        frozen = std < FROZEN_STD
        if spec.include_bias:
            mean[0], std[0], frozen[0] = 0.0, 1.0, False
        std = np.where(frozen, 1.0, std)
        if not standardize:
            mean = np.zeros_like(mean)
            std = np.ones_like(std)
        return cls(mean, std, frozen)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.ndim == 1:
            return (raw - self.mean) / self.std
        return (raw - self.mean[:, None]) / self.std[:, None]


def _check(spec: LibrarySpec, z: np.ndarray, u: np.ndarray):
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    if z.shape[0] != spec.r or u.shape[0] != spec.n_u or z.ndim != u.ndim:
        raise DimensionMismatch(f"expected z of length {spec.r} and u of length {spec.n_u}, "
                                f"got {z.shape} and {u.shape}")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(u))):
        raise NonFinite("library inputs must be finite")
    return z, u


def raw_library(spec: LibrarySpec, z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Unscaled library terms. ``z`` is (r,) or (r, m); ``u`` matches in trailing shape."""
    z, u = _check(spec, z, u)
    parts = []
    if spec.include_bias:
        parts.append(np.ones((1,) + z.shape[1:]))
    parts.append(z)
    if spec.max_degree == 2:
        i, j = spec._zz
        parts.append(z[i] * z[j])
    parts.append(u)
    if spec.max_degree == 2:
        k, l = spec._uu
        parts.append(u[k] * u[l])
        i, k = spec._zu
        parts.append(z[i] * u[k])
    return np.concatenate(parts, axis=0)


def eval_features(spec: LibrarySpec, scaler: FeatureScaler, z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Standardized feature vector of length ``spec.p``."""
    return scaler.apply(raw_library(spec, z, u))


def feature_jacobian(spec: LibrarySpec, scaler: FeatureScaler, z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Analytical p x r derivative of :func:`eval_features` with respect to ``z``."""
    z, u = _check(spec, z, u)
    if z.ndim != 1:
        raise DimensionMismatch("feature_jacobian takes a single state vector")
    s = spec.slices
    jac = np.zeros((spec.p, spec.r))
    jac[s["z"], :] = np.eye(spec.r)
    if spec.max_degree == 2:
        i, j = spec._zz
        rows = np.arange(s["zz"].start, s["zz"].stop)
        np.add.at(jac, (rows, i), z[j])
        np.add.at(jac, (rows, j), z[i])
        i, k = spec._zu
        rows = np.arange(s["zu"].start, s["zu"].stop)
        jac[rows, i] = u[k]
    return jac / scaler.std[:, None]

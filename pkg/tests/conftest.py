"""Shared builders for hand-made models and the acceptance summary hook."""
from __future__ import annotations

import numpy as np
import pytest

from thermorom.features import FeatureScaler, LibrarySpec
from thermorom.ident import RomModel

ACCEPTANCE_LINES: list[str] = []


def stable_matrix(rng, r, radius=0.95):
    """Random real matrix with spectral radius ``radius`` and no eigenvalue on the negative axis."""
    while True:
        m = rng.normal(size=(r, r))
        lam = np.linalg.eigvals(m)
        if np.all((np.abs(lam.imag) > 1e-3) | (lam.real > 0)):
            return radius * m / np.max(np.abs(lam))


def linear_model(rng, r=4, n_u=3, n_ar=0, cadence_s=3600.0, lag_scale=0.05, bias=True):
    """Linear RomModel (empty nonlinear block) with random coefficients."""
    spec = LibrarySpec(r, n_u, include_bias=bias, max_degree=1)
    return RomModel(
        a=stable_matrix(rng, r, 0.8),
        a_lags=[lag_scale * rng.normal(size=(r, r)) for _ in range(n_ar)],
        b=rng.normal(size=(r, n_u)),
        b_lags=[lag_scale * rng.normal(size=(r, n_u)) for _ in range(n_ar)],
        xi_nl=np.zeros((r, 0)),
        c=rng.normal(size=r) if bias else np.zeros(r),
        spec=spec,
        scaler=FeatureScaler.identity(spec.p),
        n_ar=n_ar,
        cadence_s=cadence_s,
    )


def quadratic_model(rng, r=10, n_u=7, n_ar=5, nl_scale=0.05):
    """Full quadratic library with a non-trivial scaler."""
    spec = LibrarySpec(r, n_u)
    scaler = FeatureScaler(rng.normal(size=spec.p), rng.uniform(0.5, 2.0, spec.p), np.zeros(spec.p, bool))
    return RomModel(
        a=stable_matrix(rng, r, 0.7),
        a_lags=[0.05 * rng.normal(size=(r, r)) for _ in range(n_ar)],
        b=rng.normal(size=(r, n_u)),
        b_lags=[0.05 * rng.normal(size=(r, n_u)) for _ in range(n_ar)],
        xi_nl=nl_scale * rng.normal(size=(r, spec.p_nl)),
        c=rng.normal(size=r),
        spec=spec,
        scaler=scaler,
        n_ar=n_ar,
        cadence_s=3600.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

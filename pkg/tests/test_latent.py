import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermorom.errors import DegenerateData, NonFinite, RankTooLarge
from thermorom.latent import fit_basis, project, reconstruct


def _low_rank(rng, d, m, r, noise=0.0):
    u, _ = np.linalg.qr(rng.normal(size=(d, r)))
    coeff = rng.normal(size=(r, m)) * np.linspace(5, 1, r)[:, None]
    return u @ coeff - 10.0 + noise * rng.normal(size=(d, m))


def test_orthonormal_and_exact_for_low_rank(rng):
    x = _low_rank(rng, 300, 40, 5)
    basis = fit_basis(x, r=5)
    assert np.allclose(basis.w.T @ basis.w, np.eye(5), atol=1e-12)
    assert np.allclose(reconstruct(basis, project(basis, x)), x, atol=1e-10)
    assert basis.explained.sum() == pytest.approx(1.0, abs=1e-12)


def test_gram_route_matches_direct_svd(rng):
    x = _low_rank(rng, 500, 30, 6, noise=1e-3)
    gram = fit_basis(x, r=4, gram_ratio=4.0)
    direct = fit_basis(x, r=4, gram_ratio=1e9)
    assert np.allclose(gram.w, direct.w, atol=1e-8)
    assert np.allclose(gram.explained, direct.explained, rtol=1e-10)


def test_sign_convention(rng):
    basis = fit_basis(_low_rank(rng, 100, 20, 3, noise=1e-2), r=3)
    pivots = np.argmax(np.abs(basis.w), axis=0)
    assert np.all(basis.w[pivots, np.arange(3)] > 0)


def test_errors(rng):
    x = _low_rank(rng, 50, 10, 2)
    with pytest.raises(RankTooLarge):
        fit_basis(x, r=11)
    with pytest.raises(DegenerateData):
        fit_basis(np.ones((50, 10)), r=1)
    with pytest.raises(DegenerateData):
        fit_basis(x, r=4)
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(NonFinite):
        fit_basis(bad, r=1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 5))
def test_projection_is_idempotent(seed, r):
    rng = np.random.default_rng(seed)
    x = _low_rank(rng, 80, 12, 6, noise=0.1)
    basis = fit_basis(x, r=r)
    z = project(basis, x)
    assert np.allclose(project(basis, reconstruct(basis, z)), z, atol=1e-9)
    # variance captured is non-increasing across modes
    assert np.all(np.diff(basis.explained) <= 1e-12)

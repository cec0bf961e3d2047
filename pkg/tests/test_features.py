import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermorom.errors import DimensionMismatch
from thermorom.features import (
    FeatureScaler,
    LibrarySpec,
    enumerate_terms,
    eval_features,
    feature_jacobian,
    raw_library,
)


def test_term_count_default():
    spec = enumerate_terms(10, 7)
    # 1 + 10 + 55 + 7 + 28 + 70
    assert spec.p == 171
    assert len(spec.term_names()) == 171
    assert spec.p_nl == 55 + 28 + 70
    assert enumerate_terms(10, 7, max_degree=1).p == 18


def test_term_order_small():
    spec = LibrarySpec(2, 1)
    assert spec.term_names() == ["1", "z0", "z1", "z0*z0", "z0*z1", "z1*z1", "u0", "u0*u0", "z0*u0", "z1*u0"]
    vals = raw_library(spec, np.array([2.0, 3.0]), np.array([5.0]))
    assert vals.tolist() == [1, 2, 3, 4, 6, 9, 5, 25, 10, 15]


def test_batch_equals_single(rng):
    spec = LibrarySpec(3, 2)
    z = rng.normal(size=(3, 6))
    u = rng.normal(size=(2, 6))
    batch = raw_library(spec, z, u)
    for k in range(6):
        assert np.array_equal(batch[:, k], raw_library(spec, z[:, k], u[:, k]))
    with pytest.raises(DimensionMismatch):
        raw_library(spec, z[:2], u)


def test_scaler_freezes_constant_terms(rng):
    spec = LibrarySpec(2, 2)
    z = rng.normal(size=(2, 50))
    u = np.vstack([rng.normal(size=50), np.full(50, 3.0)])
    sc = FeatureScaler.fit(spec, raw_library(spec, z, u))
    names = spec.term_names()
    assert sc.frozen[names.index("u1")] and sc.frozen[names.index("u1*u1")]
    assert not sc.frozen[0] and sc.mean[0] == 0 and sc.std[0] == 1
    feats = eval_features(spec, sc, z, u)
    live = ~sc.frozen
    live[0] = False
    assert np.allclose(feats[live].mean(axis=1), 0, atol=1e-12)
    assert np.allclose(feats[live].std(axis=1), 1, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 5), n_u=st.integers(0, 4))
def test_jacobian_matches_central_difference(seed, r, n_u):
    rng = np.random.default_rng(seed)
    spec = LibrarySpec(r, n_u)
    sc = FeatureScaler(rng.normal(size=spec.p), rng.uniform(0.5, 2, spec.p), np.zeros(spec.p, bool))
    z, u = rng.normal(size=r), rng.normal(size=n_u)
    jac = feature_jacobian(spec, sc, z, u)
    h = 1e-6
    fd = np.column_stack([(eval_features(spec, sc, z + h * e, u) - eval_features(spec, sc, z - h * e, u)) / (2 * h)
                          for e in np.eye(r)])
    assert np.allclose(jac, fd, atol=1e-7)

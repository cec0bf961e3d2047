import numpy as np
import pytest

from conftest import linear_model
from thermorom.ekf import (
    NoiseConfig,
    augment_operators,
    extract_current,
    init_filter,
    predict,
    process_map,
    skip_update,
    update_multi,
    update_single,
)
from thermorom.errors import CadenceMismatch, NonFiniteState
from thermorom.grid import ObsOperator, SparseWeights
from thermorom.ident import rescale_cadence


def _op(h, mu=0.0):
    return ObsOperator(np.asarray(h, float), float(mu), SparseWeights(np.zeros(0, int), np.zeros(0)), (0, 0, 0))


def test_initial_state_and_operators(rng):
    model = linear_model(rng, r=3, n_u=2, n_ar=2)
    st = init_filter(model)
    assert st.n_aug == 9 and np.all(st.zeta == 0)
    assert np.allclose(st.p_aug, 10 * np.eye(9))
    a_aug, q_aug = augment_operators(model, np.eye(3))
    assert np.array_equal(a_aug[3:, :6], np.eye(6))
    assert q_aug[:3, :3].trace() == 3 and q_aug[3:].sum() == 0
    with pytest.raises(CadenceMismatch):
        init_filter(model, cadence_s=60.0)


def test_default_q_diagonal():
    q = NoiseConfig().q_matrix(5)
    assert np.allclose(np.diag(q), [1e-2, 1e-2, 1e-3, 1e-3, 1e-3])
    assert np.allclose(NoiseConfig(q_scale=2).q_matrix(2), 2e-2 * np.eye(2))


def test_lag_hold_between_hour_boundaries(rng):
    model = rescale_cadence(linear_model(rng, r=2, n_u=1, n_ar=1, bias=False), 1200.0)
    assert model.lag_stride == 3
    st = init_filter(model)
    st = predict(st, model, np.ones(1))
    lag_after_shift = st.zeta[2:].copy()
    _, jac, shift = process_map(model, st, np.ones(1))
    assert not shift and np.array_equal(jac[2:, 2:], np.eye(2))
    st = predict(st, model, np.ones(1))
    assert np.array_equal(st.zeta[2:], lag_after_shift)


def test_update_reduces_variance_and_symmetric(rng):
    model = linear_model(rng, r=3, n_u=1)
    st = predict(init_filter(model), model, np.ones(1))
    new, rec = update_single(st, _op([1.0, 0.0, 0.0]), 0.5, 1e-2)
    assert new.p_aug[0, 0] < st.p_aug[0, 0]
    assert np.array_equal(new.p_aug, new.p_aug.T)
    assert rec.accepted.all() and rec.positive.all()
    z, p = extract_current(new)
    assert z.shape == (3,) and p.shape == (3, 3)
    assert skip_update(new) is new


def test_gate_rejects_outlier(rng):
    model = linear_model(rng, r=2, n_u=1)
    st = init_filter(model, NoiseConfig(p0_scale=1e-4))
    new, rec = update_multi(st, [_op([1, 0]), _op([0, 1])], [0.0, 100.0], [1e-2, 1e-2], gate=6.0)
    assert rec.accepted.tolist() == [True, False]
    ref, _ = update_single(st, _op([1, 0]), 0.0, 1e-2)
    assert np.allclose(new.zeta, ref.zeta) and np.allclose(new.p_aug, ref.p_aug)


def test_positivity_flag_against_floor(rng):
    model = linear_model(rng, r=1, n_u=1)
    st = init_filter(model)
    _, rec = update_single(st, _op([1.0], mu=-12.0), -12.0, 1e-3, floor=1e-10)
    assert not rec.positive[0]


def test_nonfinite_driver_rejected(rng):
    model = linear_model(rng, r=2, n_u=1)
    with pytest.raises(NonFiniteState):
        predict(init_filter(model), model, np.array([np.nan]))


def test_innovation_whiteness(rng):
    # well-specified scalar-observed AR(1): normalized innovations have unit variance
    model = linear_model(rng, r=2, n_u=1, bias=False)
    noise = NoiseConfig(q=0.01 * np.eye(2), p0=np.eye(2))
    q_chol = np.linalg.cholesky(noise.q_matrix(2))
    z = rng.normal(size=2)
    st = init_filter(model, noise)
    h = np.array([1.0, -0.5])
    norm = []
    for k in range(3000):
        u = np.array([np.sin(k / 30)])
        z = model.a @ z + model.b @ u + q_chol @ rng.normal(size=2)
        st = predict(st, model, u, noise)
        y = h @ z + 0.1 * rng.normal()
        st, rec = update_single(st, _op(h), y, 0.01)
        if k >= 100:
            norm.append(rec.nu[0] / np.sqrt(rec.s[0]))
    assert 0.8 <= np.var(norm) <= 1.2


def test_lag_cross_covariance_monte_carlo(rng):
    # lag-1 cross block of P versus an ensemble propagated through the same AR(1)
    model = linear_model(rng, r=2, n_u=1, n_ar=1, bias=False, lag_scale=0.2)
    noise = NoiseConfig(q=0.05 * np.eye(2), p0=0.3 * np.eye(2))
    st = init_filter(model, noise)
    n = 100_000
    zc = rng.normal(size=(2, n)) * np.sqrt(0.3)
    zl = rng.normal(size=(2, n)) * np.sqrt(0.3)
    u = np.zeros(1)
    for _ in range(3):
        st = predict(st, model, u, noise)
        nxt = model.a @ zc + model.a_lags[0] @ zl + np.sqrt(0.05) * rng.normal(size=(2, n))
        zl, zc = zc, nxt
    cross = st.p_aug[:2, 2:]
    sample = (zc - zc.mean(1, keepdims=True)) @ (zl - zl.mean(1, keepdims=True)).T / (n - 1)
    # standard error of a sample covariance ~ sqrt((var_a var_b + cov^2) / n)
    va, vb = np.diag(st.p_aug[:2, :2]), np.diag(st.p_aug[2:, 2:])
    se = np.sqrt((np.outer(va, vb) + cross**2) / n)
    assert np.all(np.abs(sample - cross) <= 3 * se)

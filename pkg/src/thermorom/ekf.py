"""Companion-form extended Kalman filter over the lagged latent state.

The augmented state stacks the current latent vector on top of ``n_ar`` lag
samples, ``zeta = [z; z_lag1; ...; z_lagN]``. Only the top block is observed
and only the top block receives process noise. At sub-hourly cadence the lag
blocks are held between hour boundaries and shifted once every
``model.lag_stride`` steps.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import CadenceMismatch, NonFiniteState, NonPositiveInnovationVariance
from .grid import ObsOperator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseConfig:
    """Process noise, initial covariance and evaluation spin-up.

    ``q`` defaults to ``diag(q1, q1, q2, ..., q2)`` once ``r`` is known.
    """

    q: np.ndarray | None = None
    p0: np.ndarray | None = None
    q1: float = 1e-2
    q2: float = 1e-3
    p0_scale: float = 10.0
    q_scale: float = 1.0
    spin_up_s: float = 6 * 3600.0

    def q_matrix(self, r: int) -> np.ndarray:
        if self.q is not None:
            return np.asarray(self.q, dtype=float) * self.q_scale
        diag = np.full(r, self.q2)
        diag[:2] = self.q1
        return np.diag(diag) * self.q_scale

    def p0_matrix(self, r: int) -> np.ndarray:
        if self.p0 is not None:
            return np.asarray(self.p0, dtype=float)
        return self.p0_scale * np.eye(r)


@dataclass(frozen=True)
class FilterState:
    zeta: np.ndarray
    p_aug: np.ndarray
    k: int
    cadence_s: float
    r: int
    u_lags: np.ndarray = field(repr=False)

    @property
    def n_aug(self) -> int:
        return self.zeta.shape[0]


@dataclass(frozen=True)
class InnovationRecord:
    """Per-update diagnostics. ``accepted`` is False where the gate rejected a component."""

    nu: np.ndarray
    s: np.ndarray
    accepted: np.ndarray
    positive: np.ndarray
    trace_p: float


def augment_operators(model, q: np.ndarray):
    """Companion matrix with identity shift blocks and the top-left noise embedding."""
    r, n = model.r, model.n_ar
    n_aug = r * (n + 1)
    a_aug = np.zeros((n_aug, n_aug))
    a_aug[:r, :r] = model.a
    for j in range(n):
        a_aug[:r, r * (j + 1):r * (j + 2)] = model.a_lags[j]
    a_aug[r:, :-r] = np.eye(r * n)
    q_aug = np.zeros((n_aug, n_aug))
    q_aug[:r, :r] = q
    return a_aug, q_aug


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def init_filter(model, noise: NoiseConfig | None = None, cadence_s: float | None = None) -> FilterState:
    """Zero mean, block-diagonal covariance with ``p0`` in every block."""
    noise = noise or NoiseConfig()
    if cadence_s is not None and abs(model.cadence_s - cadence_s) > 1e-9:
        raise CadenceMismatch(f"model cadence {model.cadence_s} s, filter step {cadence_s} s")
    r, n = model.r, model.n_ar
    p0 = noise.p0_matrix(r)
    return FilterState(
        zeta=np.zeros(r * (n + 1)),
        p_aug=scipy.linalg.block_diag(*([p0] * (n + 1))),
        k=0,
        cadence_s=model.cadence_s,
        r=r,
        u_lags=np.zeros((n, model.n_u)),
    )


def process_map(model, state: FilterState, u: np.ndarray):
    """Full augmented step ``F(zeta, u)`` and its Jacobian ``dF/dzeta``."""
    r, n = model.r, model.n_ar
    z = state.zeta[:r]
    z_lags = state.zeta[r:].reshape(n, r)
    top = model.step(z, z_lags, u, state.u_lags)

    n_aug = state.n_aug
    jac = np.zeros((n_aug, n_aug))
    jac[:r, :r] = model.state_jacobian(z, u)
    for j in range(n):
        jac[:r, r * (j + 1):r * (j + 2)] = model.a_lags[j]
    shift = n > 0 and state.k % model.lag_stride == 0
    if shift:
        jac[r:, :-r] = np.eye(r * n)
        zeta = np.concatenate([top, state.zeta[:-r]])
    else:
        jac[r:, r:] = np.eye(r * n)
        zeta = np.concatenate([top, state.zeta[r:]])
    return zeta, jac, shift


def predict(state: FilterState, model, u: np.ndarray, noise: NoiseConfig | None = None) -> FilterState:
    """Propagate mean through the nonlinear map and covariance through its Jacobian."""
    noise = noise or NoiseConfig()
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise NonFiniteState("driver vector is not finite")
    with np.errstate(over="ignore", invalid="ignore"):
        zeta, jac, shift = process_map(model, state, u)
        p = jac @ state.p_aug @ jac.T
        r = state.r
        p[:r, :r] += noise.q_matrix(r)
        p = _symmetrize(p)
    if not (np.all(np.isfinite(zeta)) and np.all(np.isfinite(p))):
        raise NonFiniteState(f"filter diverged at step {state.k}")
    u_lags = np.vstack([u, state.u_lags[:-1]]) if shift else state.u_lags
    return replace(state, zeta=zeta, p_aug=p, k=state.k + 1, u_lags=u_lags)


def update_multi(state: FilterState, obs_list: list[ObsOperator], y_vec, sigma_vec,
                 gate: float | None = None, floor: float = 0.0):
    """Joseph-form update with stacked, conditionally independent scalar measurements.

    ``y_vec`` holds log10 densities and ``sigma_vec`` their noise variances.
    With ``gate`` set, components whose squared innovation exceeds
    ``gate**2 * S_ii`` are dropped before the update.
    """
    y = np.atleast_1d(np.asarray(y_vec, dtype=float))
    var = np.atleast_1d(np.asarray(sigma_vec, dtype=float))
    if not obs_list or len(obs_list) != y.size or y.size != var.size:
        raise ValueError("need matching, nonempty observation, value and variance lists")
    if np.any(~(var > 0)):
        raise ValueError("measurement variances must be positive")

    r = state.r
    z = state.zeta[:r]
    h = np.zeros((y.size, state.n_aug))
    h[:, :r] = np.vstack([op.h_row for op in obs_list])
    mu = np.array([op.mu_scalar for op in obs_list])
    with np.errstate(over="ignore"):
        positive = np.array([10.0 ** (h[i, :r] @ z + mu[i]) > floor for i in range(y.size)])
    nu = y - h[:, :r] @ z - mu
    ph = state.p_aug @ h.T
    s_full = h @ ph + np.diag(var)

    accepted = np.ones(y.size, dtype=bool)
    if gate is not None:
        accepted = nu**2 <= gate**2 * np.diag(s_full)
    if not np.any(accepted):
        return state, InnovationRecord(nu, np.diag(s_full).copy(), accepted, positive,
                                       float(np.trace(state.p_aug)))

    idx = np.flatnonzero(accepted)
    h_a, s_a, nu_a, ph_a = h[idx], s_full[np.ix_(idx, idx)], nu[idx], ph[:, idx]
    try:
        s_factor = scipy.linalg.cho_factor(s_a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveInnovationVariance("innovation covariance is not positive definite") from exc
    gain = scipy.linalg.cho_solve(s_factor, ph_a.T).T
    zeta = state.zeta + gain @ nu_a
    ikh = np.eye(state.n_aug) - gain @ h_a
    p = ikh @ state.p_aug @ ikh.T + (gain * var[idx]) @ gain.T
    p = _symmetrize(p)
    if not (np.all(np.isfinite(zeta)) and np.all(np.isfinite(p))):
        raise NonFiniteState(f"update produced non-finite state at step {state.k}")
    new = replace(state, zeta=zeta, p_aug=p)
    return new, InnovationRecord(nu, np.diag(s_full).copy(), accepted, positive, float(np.trace(p)))


def update_single(state: FilterState, obs: ObsOperator, y: float, sigma_v2: float,
                  gate: float | None = None, floor: float = 0.0):
    """Scalar measurement update; identical to a one-element :func:`update_multi`."""
    return update_multi(state, [obs], [y], [sigma_v2], gate=gate, floor=floor)


def skip_update(state: FilterState) -> FilterState:
    """No measurement at this step: keep the predicted state."""
    log.debug("no measurement at filter step %d", state.k)
    return state


def extract_current(state: FilterState):
    """Current latent estimate and its r x r covariance block."""
    r = state.r
    return state.zeta[:r].copy(), state.p_aug[:r, :r].copy()

"""Ridge identification of sparse autoregressive and DMDc latent models.

Every block of the update

    z[k+1] = A z[k] + sum_j A_j z[k-j] + B u[k] + sum_j B_j u[k-j]
             + Xi_nl phi_nl(z[k], u[k]) + c

is estimated in one stacked ridge regression and then sliced. Linear
regressors are standardized for the solve and the scaling is folded back
into ``A``, ``B`` and ``c``; ``Xi_nl`` stays in standardized-feature units.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import (
    CadenceMismatch,
    DimensionMismatch,
    InsufficientData,
    NoRealPrincipalRoot,
    NonFinite,
    NonFiniteState,
    SingularSystem,
)
from .features import (
    FROZEN_STD,
    FeatureScaler,
    LibrarySpec,
    enumerate_terms,
    eval_features,
    feature_jacobian,
    raw_library,
)

SINDYC_AR = "sindyc_ar"
DMDC = "dmdc"


@dataclass(frozen=True)
class RegressionConfig:
    alpha: float = 500_000.0
    standardize: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("ridge alpha must be positive")


@dataclass(frozen=True)
class RomModel:
    """Identified latent dynamics.

    ``lag_stride`` is the number of model steps between stored lag samples: 1 at
    the identification cadence, ``T1 / t2`` after :func:`rescale_cadence`.
    """

    a: np.ndarray
    a_lags: list
    b: np.ndarray
    b_lags: list
    xi_nl: np.ndarray
    c: np.ndarray
    spec: LibrarySpec
    scaler: FeatureScaler
    n_ar: int
    cadence_s: float
    kind: str = SINDYC_AR
    alpha: float = 0.0
    lag_stride: int = 1
    q_suggest: np.ndarray | None = None
    fitted: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def r(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]

    def nonlinear_features(self, z, u) -> np.ndarray:
        return eval_features(self.spec, self.scaler, z, u)[self.spec.nl_index]

    def step(self, z, z_lags, u, u_lags) -> np.ndarray:
        """One model step. ``z_lags`` is (n_ar, r), ``u_lags`` is (n_ar, n_u)."""
        out = self.a @ z + self.b @ u + self.c
        for j in range(self.n_ar):
            out = out + self.a_lags[j] @ z_lags[j] + self.b_lags[j] @ u_lags[j]
        if self.xi_nl.size:
            out = out + self.xi_nl @ self.nonlinear_features(z, u)
        return out

    def state_jacobian(self, z, u) -> np.ndarray:
        """Derivative of :meth:`step` with respect to the current state."""
        jac = self.a.copy()
        if self.xi_nl.size:
            dphi = feature_jacobian(self.spec, self.scaler, z, u)[self.spec.nl_index]
            jac = jac + self.xi_nl @ dphi
        return jac


def ridge_solve(targets: np.ndarray, regressors: np.ndarray, alpha: float) -> np.ndarray:
    """``targets @ X.T @ inv(X @ X.T + alpha I)`` via a Cholesky solve."""
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    x = np.atleast_2d(np.asarray(regressors, dtype=float))
    if y.shape[1] != x.shape[1]:
        raise DimensionMismatch(f"targets have {y.shape[1]} samples, regressors {x.shape[1]}")
    if x.shape[1] == 0:
        raise InsufficientData("ridge regression needs at least one sample")
    if not alpha > 0:
        raise ValueError("ridge alpha must be positive")
    gram = x @ x.T
    gram[np.diag_indices_from(gram)] += alpha
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return scipy.linalg.cho_solve(factor, x @ y.T).T


def _lagged(series: np.ndarray, n_ar: int) -> np.ndarray:
    """Rows [s_k; s_{k-1}; ...; s_{k-n_ar}] for k = n_ar .. m-2."""
    m = series.shape[1]
    return np.concatenate([series[:, n_ar - j:m - 1 - j] for j in range(n_ar + 1)], axis=0)


def stacked_regressors(model: RomModel, latents: np.ndarray, drivers: np.ndarray) -> np.ndarray:
    """Raw regressor matrix [z; z lags; u; u lags; phi_nl; 1] at the model's native lags."""
    z = np.asarray(latents, dtype=float)
    u = np.asarray(drivers, dtype=float)
    n = model.n_ar
    cur = slice(n, z.shape[1] - 1)
    parts = [_lagged(z, n), _lagged(u, n)]
    if model.spec.p_nl:
        parts.append(eval_features(model.spec, model.scaler, z[:, cur], u[:, cur])[model.spec.nl_index])
    parts.append(np.ones((1, z.shape[1] - 1 - n)))
    return np.concatenate(parts, axis=0)


def stacked_coefficients(model: RomModel) -> np.ndarray:
    """Coefficient blocks reassembled in the order of :func:`stacked_regressors`."""
    return np.hstack([model.a, *model.a_lags, model.b, *model.b_lags, model.xi_nl, model.c[:, None]])


def _fit(latents, drivers, n_ar, spec, cfg, kind) -> RomModel:
    z = np.asarray(latents, dtype=float)
    u = np.asarray(drivers, dtype=float)
    if u.ndim == 1:
        u = u[None, :]
    r, m = z.shape
    if u.shape[1] != m:
        raise DimensionMismatch(f"latents have {m} samples, drivers {u.shape[1]}")
    if spec.r != r or spec.n_u != u.shape[0]:
        raise DimensionMismatch("library spec does not match latent/driver dimensions")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(u))):
        raise NonFinite("training series must be finite")
    if m <= n_ar + 1:
        raise InsufficientData(f"{m} samples cannot support {n_ar} lags")

    cur = slice(n_ar, m - 1)
    scaler = FeatureScaler.fit(spec, raw_library(spec, z[:, cur], u[:, cur]), cfg.standardize)
    nl = spec.nl_index

    lin = np.concatenate([_lagged(z, n_ar), _lagged(u, n_ar)], axis=0)
    if cfg.standardize:
        lin_mean = lin.mean(axis=1)
        lin_std = lin.std(axis=1)
        lin_frozen = lin_std < FROZEN_STD
        lin_std = np.where(lin_frozen, 1.0, lin_std)
    else:
        lin_mean = np.zeros(lin.shape[0])
        lin_std = np.ones(lin.shape[0])
        lin_frozen = np.zeros(lin.shape[0], dtype=bool)
    blocks = [(lin - lin_mean[:, None]) / lin_std[:, None]]
    frozen = [lin_frozen]
    if len(nl):
        blocks.append(eval_features(spec, scaler, z[:, cur], u[:, cur])[nl])
        frozen.append(scaler.frozen[nl])
    blocks.append(np.ones((1, m - 1 - n_ar)))
    frozen.append(np.array([not spec.include_bias]))
    x = np.concatenate(blocks, axis=0)
    frozen = np.concatenate(frozen)
    target = z[:, n_ar + 1:]

    coef = np.zeros((r, x.shape[0]))
    active = ~frozen
    coef[:, active] = ridge_solve(target, x[active], cfg.alpha)

    n_lin = lin.shape[0]
    lin_coef = coef[:, :n_lin] / lin_std
    offset = coef[:, -1] - coef[:, :n_lin] @ (lin_mean / lin_std)
    xi_nl = coef[:, n_lin:n_lin + len(nl)]

    zs = r * (n_ar + 1)
    a_all = lin_coef[:, :zs]
    b_all = lin_coef[:, zs:]
    n_u = u.shape[0]
    model = RomModel(
        a=a_all[:, :r],
        a_lags=[a_all[:, r * j:r * (j + 1)] for j in range(1, n_ar + 1)],
        b=b_all[:, :n_u],
        b_lags=[b_all[:, n_u * j:n_u * (j + 1)] for j in range(1, n_ar + 1)],
        xi_nl=xi_nl,
        c=offset,
        spec=spec,
        scaler=scaler,
        n_ar=n_ar,
        cadence_s=0.0,
        kind=kind,
        alpha=cfg.alpha,
    )
    fitted = stacked_coefficients(model) @ stacked_regressors(model, z, u)
    resid = target - fitted
    q = np.atleast_2d(np.cov(resid)) if resid.shape[1] > 1 else np.zeros((r, r))
    return replace(model, fitted=fitted, q_suggest=q)


def fit_sindyc_ar(latents, drivers, n_ar: int = 5, spec: LibrarySpec | None = None,
                  cfg: RegressionConfig | None = None, cadence_s: float = 3600.0) -> RomModel:
    """Fit the sparse autoregressive model on series sampled every ``cadence_s`` seconds."""
    z = np.asarray(latents, dtype=float)
    u = np.atleast_2d(np.asarray(drivers, dtype=float))
    spec = spec or enumerate_terms(z.shape[0], u.shape[0])
    model = _fit(z, u, n_ar, spec, cfg or RegressionConfig(), SINDYC_AR)
    return replace(model, cadence_s=float(cadence_s))


def fit_dmdc(latents, drivers, cfg: RegressionConfig | None = None, cadence_s: float = 3600.0,
             include_bias: bool = True) -> RomModel:
    """Linear ``z[k+1] = A z[k] + B u[k] + c`` reference model."""
    z = np.asarray(latents, dtype=float)
    u = np.atleast_2d(np.asarray(drivers, dtype=float))
    spec = LibrarySpec(z.shape[0], u.shape[0], include_bias=include_bias, max_degree=1)
    model = _fit(z, u, 0, spec, cfg or RegressionConfig(), DMDC)
    return replace(model, cadence_s=float(cadence_s))


def _power_and_gain(a: np.ndarray, s: float, tol: float = 1e-8, unit_tol: float = 1e-10):
    """Principal ``a**s`` and ``(a**s - I)(a - I)^-1`` through the eigenbasis."""
    lam, vec = np.linalg.eig(a)
    scale = max(np.max(np.abs(lam)), 1.0)
    on_axis = (np.abs(lam.imag) <= 1e-12 * scale) & (lam.real <= 0)
    if np.any(on_axis):
        raise NoRealPrincipalRoot(f"eigenvalue(s) {lam[on_axis]} on the closed negative real axis")
    lam_s = lam.astype(complex) ** s
    near_one = np.abs(lam - 1.0) < unit_tol
    gain = np.where(near_one, s, (lam_s - 1.0) / np.where(near_one, 2.0, lam - 1.0))
    vinv = np.linalg.inv(vec)
    a_s = (vec * lam_s) @ vinv
    g = (vec * gain) @ vinv
    norm = max(np.linalg.norm(a, ord=np.inf), 1e-300)
    if np.max(np.abs(a_s.imag)) > tol * norm or np.max(np.abs(g.imag)) > tol * max(norm, 1.0):
        raise NoRealPrincipalRoot("fractional power has no real principal branch")
    return a_s.real, g.real


def rescale_cadence(model: RomModel, t2: float) -> RomModel:
    """Re-express the model at step ``t2`` seconds.

    The linear part is transformed exactly (``A' = A^s``,
    ``B' = (A' - I)(A - I)^-1 B`` with ``s = t2 / T1``); lagged, nonlinear and
    constant contributions are scaled by ``s`` and applied every sub-step, while
    lag samples stay ``T1`` apart.
    """
    ratio = model.cadence_s / t2
    n_sub = int(round(ratio))
    if n_sub < 1 or abs(ratio - n_sub) > 1e-9 * ratio:
        raise CadenceMismatch(f"step {t2} s does not divide model cadence {model.cadence_s} s")
    if n_sub == 1:
        return model
    s = 1.0 / n_sub
    a_s, gain = _power_and_gain(model.a, s)
    return replace(
        model,
        a=a_s,
        b=gain @ model.b,
        a_lags=[s * m for m in model.a_lags],
        b_lags=[s * m for m in model.b_lags],
        xi_nl=s * model.xi_nl,
        c=s * model.c,
        cadence_s=float(t2),
        lag_stride=model.lag_stride * n_sub,
        fitted=None,
    )


def simulate(model: RomModel, drivers: np.ndarray, z0: np.ndarray | None = None) -> np.ndarray:
    """Open-loop trajectory from ``z0`` (default 0) with zero-filled lag history.

    Returns an r x m array whose column ``k`` is the state at driver sample ``k``;
    step ``k -> k+1`` uses ``drivers[:, k]``.
    """
    u = np.atleast_2d(np.asarray(drivers, dtype=float))
    m = u.shape[1]
    z = np.zeros(model.r) if z0 is None else np.asarray(z0, dtype=float).copy()
    z_lags = np.zeros((model.n_ar, model.r))
    u_lags = np.zeros((model.n_ar, model.n_u))
    out = np.empty((model.r, m))
    out[:, 0] = z
    for k in range(m - 1):
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = model.step(z, z_lags, u[:, k], u_lags)
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteState(f"open-loop trajectory left finite range at step {k}")
        if model.n_ar and k % model.lag_stride == 0:
            z_lags = np.vstack([z, z_lags[:-1]])
            u_lags = np.vstack([u[:, k], u_lags[:-1]])
        z = nxt
        out[:, k + 1] = z
    return out

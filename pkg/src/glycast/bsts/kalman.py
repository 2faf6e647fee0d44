"""Linear-Gaussian filtering, likelihood, and simulation smoothing.

Conventions: the state at index t carries the components generating y_t;
`transition_matrix(phi, t)` maps the time-t state to the time-(t+1) state.
Exact zero variances are supported (the filter skips degenerate updates and
the backward sampler collapses to the deterministic path), which the noiseless
oracle cases rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import NumericalError, RangeError, SchemaError
from .components import StateSpaceModel


@dataclass(frozen=True)
class ParamPoint:
    """One point in parameter space: noise sds, trend dynamics, coefficients."""

    sigma_level: float
    sigma_slope: float
    sigma_obs: float
    sigma_seasonal: tuple[float, ...] = ()
    d: float = 0.0
    phi: float = 0.0
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        for name in ("sigma_level", "sigma_slope", "sigma_obs"):
            if getattr(self, name) < 0:
                raise RangeError(f"{name} must be >= 0")
        if any(s < 0 for s in self.sigma_seasonal):
            raise RangeError("seasonal sds must be >= 0")
        if abs(self.phi) > 1.0:
            raise RangeError(f"phi must lie in [-1, 1], got {self.phi}")


def _check_params(model: StateSpaceModel, params: ParamPoint) -> None:
    if len(params.sigma_seasonal) != len(model.seasonals):
        raise SchemaError(
            f"params carry {len(params.sigma_seasonal)} seasonal sds for "
            f"{len(model.seasonals)} seasonal components"
        )
    if model.n_regressors and params.beta.shape != (model.n_regressors,):
        raise SchemaError(f"beta must have length {model.n_regressors}")


@dataclass(frozen=True)
class FilterResult:
    loglik: float
    filtered_means: np.ndarray  # (n, m) E[state_t | y_1..t]
    filtered_covs: np.ndarray  # (n, m, m)
    predicted_means: np.ndarray  # (n,) E[y_t | y_1..t-1]
    predicted_variances: np.ndarray  # (n,)
    state_pred_means: np.ndarray  # (n, m) E[state_t | y_1..t-1]
    state_pred_covs: np.ndarray  # (n, m, m)


def kalman_loglik(
    model: StateSpaceModel,
    params: ParamPoint,
    y: Sequence[float],
    x: Optional[np.ndarray] = None,
) -> FilterResult:
    """Run the forward filter and return the exact Gaussian log-likelihood.

    Degenerate steps (zero predictive variance) contribute nothing to the
    likelihood and leave the state untouched.
    """
    _check_params(model, params)
    y = np.asarray(y, dtype=float)
    n = y.size
    m = model.state_dim
    z = model.z
    offsets = model.observation_offsets(params.beta, x, n)
    obs_var = params.sigma_obs**2
    level_var = params.sigma_level**2
    slope_var = params.sigma_slope**2
    seasonal_vars = [s**2 for s in params.sigma_seasonal]
    c = model.state_intercept(params.d, params.phi)

    period = model.period
    transitions = {}
    noises = {}
    for t in range(period):
        key = model.boundary_mask(t)
        if key not in transitions:
            transitions[key] = model.transition_matrix(params.phi, t)
            noises[key] = model.noise_diag(level_var, slope_var, seasonal_vars, t)

    a = model.a1.copy()
    P = np.diag(model.p1_diag).astype(float)

    loglik = 0.0
    filtered_means = np.empty((n, m))
    filtered_covs = np.empty((n, m, m))
    predicted_means = np.empty(n)
    predicted_variances = np.empty(n)
    state_pred_means = np.empty((n, m))
    state_pred_covs = np.empty((n, m, m))
    log2pi = np.log(2.0 * np.pi)

    for t in range(n):
        state_pred_means[t] = a
        state_pred_covs[t] = P
        pz = P @ z
        f = float(z @ pz + obs_var)
        pred = float(z @ a + offsets[t])
        predicted_means[t] = pred
        predicted_variances[t] = f
        v = y[t] - pred
        if not np.isfinite(f) or not np.isfinite(v):
            raise NumericalError(f"non-finite filter quantity at step {t}")
        if f > 0.0:
            loglik += -0.5 * (log2pi + np.log(f) + v * v / f)
            gain = pz / f
            a = a + gain * v
            P = P - np.outer(gain, pz)
            P = (P + P.T) / 2.0
        filtered_means[t] = a
        filtered_covs[t] = P
        key = model.boundary_mask(t)
        T = transitions[key]
        a = T @ a + c
        P = T @ P @ T.T + np.diag(noises[key])

    return FilterResult(
        loglik=float(loglik),
        filtered_means=filtered_means,
        filtered_covs=filtered_covs,
        predicted_means=predicted_means,
        predicted_variances=predicted_variances,
        state_pred_means=state_pred_means,
        state_pred_covs=state_pred_covs,
    )


def _sample_gaussian(mean: np.ndarray, cov: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(mean, cov) for PSD (possibly singular) cov."""
    scale = float(np.trace(cov))
    if not np.isfinite(scale):
        raise NumericalError("non-finite covariance in sampler")
    if scale <= 0.0:
        return mean.copy()
    # Smoothing covariances are PSD up to rounding; a trace-relative jitter
    # keeps Cholesky on the fast path without distorting the draw.
    jitter = 1e-12 * scale / mean.size
    try:
        chol = np.linalg.cholesky(cov + jitter * np.eye(mean.size))
        return mean + chol @ rng.standard_normal(mean.size)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh((cov + cov.T) / 2.0)
        w = np.clip(w, 0.0, None)
        return mean + v @ (np.sqrt(w) * rng.standard_normal(mean.size))


def _psd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric PSD A, tolerating singularity."""
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        return np.linalg.pinv((A + A.T) / 2.0, hermitian=True) @ B


def ffbs_sample(
    model: StateSpaceModel,
    params: ParamPoint,
    y: Sequence[float],
    rng: np.random.Generator,
    x: Optional[np.ndarray] = None,
    filt: Optional[FilterResult] = None,
) -> np.ndarray:
    """Draw one state trajectory from the smoothing distribution.

    Forward filter then backward sample: the terminal state comes from its
    filtered distribution and each earlier state from its Gaussian conditional
    given the sampled successor.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if filt is None:
        filt = kalman_loglik(model, params, y, x)
    transitions: dict[tuple[bool, ...], np.ndarray] = {}
    for t in range(model.period):
        key = model.boundary_mask(t)
        if key not in transitions:
            transitions[key] = model.transition_matrix(params.phi, t)
    states = np.empty((n, model.state_dim))
    states[n - 1] = _sample_gaussian(filt.filtered_means[n - 1], filt.filtered_covs[n - 1], rng)
    for t in range(n - 2, -1, -1):
        T = transitions[model.boundary_mask(t)]
        # cov(state_t, state_{t+1} | y_1..t) = P_t|t T'
        G = filt.filtered_covs[t] @ T.T
        B = _psd_solve(filt.state_pred_covs[t + 1], G.T).T
        mean = filt.filtered_means[t] + B @ (states[t + 1] - filt.state_pred_means[t + 1])
        cov = filt.filtered_covs[t] - B @ G.T
        cov = (cov + cov.T) / 2.0
        states[t] = _sample_gaussian(mean, cov, rng)
    return states


def forecast_path(
    model: StateSpaceModel,
    params: ParamPoint,
    terminal_state: np.ndarray,
    horizon: int,
    x_future: Optional[np.ndarray],
    rng: Optional[np.random.Generator],
    start_t: Optional[int] = None,
) -> np.ndarray:
    """Propagate a terminal state h steps ahead.

    With rng=None the propagation is deterministic (innovations and
    observation noise suppressed); otherwise innovations are sampled. The
    terminal state is taken to sit at time index start_t (default: the last
    training index), so the seasonal boundary schedule continues in phase.
    """
    if horizon < 1:
        raise RangeError("horizon must be >= 1")
    t0 = model.n_train - 1 if start_t is None else start_t
    level_var = params.sigma_level**2
    slope_var = params.sigma_slope**2
    seasonal_vars = [s**2 for s in params.sigma_seasonal]
    c = model.state_intercept(params.d, params.phi)
    if model.n_regressors:
        if x_future is None:
            raise SchemaError("x_future is required when the model has regressors")
        x_future = np.asarray(x_future, dtype=float)
        if x_future.shape != (horizon, model.n_regressors):
            raise SchemaError(f"x_future must have shape ({horizon}, {model.n_regressors})")
        future_offsets = x_future @ params.beta
    else:
        future_offsets = np.zeros(horizon)

    alpha = np.asarray(terminal_state, dtype=float).copy()
    out = np.empty(horizon)
    for j in range(horizon):
        t = t0 + j
        T = model.transition_matrix(params.phi, t)
        q = model.noise_diag(level_var, slope_var, seasonal_vars, t)
        alpha = T @ alpha + c
        obs_noise = 0.0
        if rng is not None:
            alpha = alpha + np.sqrt(q) * rng.standard_normal(alpha.size)
            obs_noise = params.sigma_obs * rng.standard_normal()
        out[j] = float(model.z @ alpha + future_offsets[j] + obs_noise)
    return out

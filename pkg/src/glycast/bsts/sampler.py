"""Gibbs MCMC over the structural model and model-averaged forecasting.

Each sweep: (1) draw a state path by FFBS given the current parameters;
(2) conjugate inverse-gamma draws for the level, slope, and seasonal noise
variances from state-innovation sums of squares; (3) Gaussian draw for the
long-run slope D and truncated-Gaussian draw for the AR coefficient phi given
the slope path; (4) a spike-and-slab sweep on the observation residual
(or a plain inverse-gamma observation-variance draw when there is no
regression). Forecasts average sampled forward paths across retained draws.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from ..errors import NumericalError, RangeError, SchemaError
from .components import StateSpaceModel, VariancePrior
from .kalman import ParamPoint, forecast_path, ffbs_sample
from .spike_slab import RegressionSettings, sample_regression

_FORECAST_SALT = 0x5EED
_PHI_EDGE = 1e-9


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained per-draw parameters and terminal states from one chain."""

    sigma_level: np.ndarray  # (K,)
    sigma_slope: np.ndarray
    sigma_obs: np.ndarray
    sigma_seasonal: np.ndarray  # (K, S)
    d: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray  # (K, J) 0/1
    beta: np.ndarray  # (K, J)
    terminal_state: np.ndarray  # (K, m)
    requested: int
    burn: int
    seed: int
    seasonal_names: tuple[str, ...] = ()
    design_names: tuple[str, ...] = ()

    @property
    def n_draws(self) -> int:
        return int(self.sigma_level.size)

    def __post_init__(self) -> None:
        if self.n_draws != self.requested - self.burn:
            raise SchemaError("draw count must equal requested draws minus burn-in")
        # MCMC output is strictly positive with |phi| < 1 by construction;
        # hand-built degenerate draws (zero noise) are allowed for testing
        # deterministic propagation.
        if np.any(self.sigma_level < 0) or np.any(self.sigma_slope < 0) or np.any(self.sigma_obs < 0):
            raise RangeError("noise sds must be >= 0")
        if self.sigma_seasonal.size and np.any(self.sigma_seasonal < 0):
            raise RangeError("seasonal noise sds must be >= 0")
        if np.any(np.abs(self.phi) > 1.0):
            raise RangeError("phi draws must lie in [-1, 1]")
        if self.beta.size and np.any(self.beta[self.gamma == 0] != 0.0):
            raise RangeError("beta must be exactly zero wherever gamma is zero")

    def param_point(self, k: int) -> ParamPoint:
        return ParamPoint(
            sigma_level=float(self.sigma_level[k]),
            sigma_slope=float(self.sigma_slope[k]),
            sigma_obs=float(self.sigma_obs[k]),
            sigma_seasonal=tuple(float(s) for s in self.sigma_seasonal[k]),
            d=float(self.d[k]),
            phi=float(self.phi[k]),
            beta=self.beta[k],
        )

    def to_csv(self, path: Path | str) -> None:
        header = ["draw", "sigma_level", "sigma_slope", "sigma_obs", "d", "phi"]
        header += [f"sigma_{name}" for name in self.seasonal_names]
        header += [f"gamma_{name}" for name in self.design_names]
        header += [f"beta_{name}" for name in self.design_names]
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for k in range(self.n_draws):
                row = [
                    k,
                    repr(float(self.sigma_level[k])),
                    repr(float(self.sigma_slope[k])),
                    repr(float(self.sigma_obs[k])),
                    repr(float(self.d[k])),
                    repr(float(self.phi[k])),
                ]
                row += [repr(float(v)) for v in self.sigma_seasonal[k]]
                row += [int(v) for v in self.gamma[k]]
                row += [repr(float(v)) for v in self.beta[k]]
                writer.writerow(row)


def _draw_variance(prior: VariancePrior, ss: float, count: int, rng: np.random.Generator) -> float:
    shape = prior.shape + count / 2.0
    scale = prior.scale + ss / 2.0
    return scale / max(rng.gamma(shape), 1e-300)


def _draw_truncated_normal(
    mean: float, sd: float, lo: float, hi: float, rng: np.random.Generator
) -> float:
    a = ndtr((lo - mean) / sd)
    b = ndtr((hi - mean) / sd)
    if b - a < 1e-15:
        # Essentially no mass inside the interval: pin to the nearest edge.
        return lo + _PHI_EDGE if mean < lo else hi - _PHI_EDGE
    u = a + (b - a) * rng.random()
    u = min(max(u, 1e-15), 1.0 - 1e-15)
    value = mean + sd * float(ndtri(u))
    return min(max(value, lo + _PHI_EDGE), hi - _PHI_EDGE)


def mcmc_fit(
    model: StateSpaceModel,
    y: Sequence[float],
    x: Optional[np.ndarray] = None,
    draws: int = 1000,
    burn: int = 200,
    seed: int = 0,
) -> PosteriorDraws:
    """Run one Gibbs chain and retain the post-burn draws."""
    if draws <= burn:
        raise RangeError(f"draws ({draws}) must exceed burn ({burn})")
    if burn < 0:
        raise RangeError("burn must be >= 0")
    y = np.asarray(y, dtype=float)
    n = y.size
    rng = np.random.default_rng(seed)
    tp = model.trend_priors
    n_seasonal = len(model.seasonals)
    j_total = model.n_regressors
    design = model.design if x is None else np.asarray(x, dtype=float)
    reg_settings = RegressionSettings(spike_slab=model.spike_slab, obs_var_prior=model.obs_var_prior)

    sigma_level = float(np.sqrt(tp.level_var.guess))
    sigma_slope = float(np.sqrt(tp.slope_var.guess))
    sigma_obs = float(np.sqrt(model.obs_var_prior.guess))
    sigma_seasonal = [float(np.sqrt(s.var_prior.guess)) for s in model.seasonals]
    d = tp.d_mean
    phi = float(np.clip(tp.phi_mean, -1.0 + _PHI_EDGE, 1.0 - _PHI_EDGE))
    beta = np.zeros(j_total)
    gamma = np.zeros(j_total, dtype=np.int64)

    boundary_steps = [
        np.array([t for t in range(n - 1) if layout.boundary_at(t)], dtype=np.int64)
        for layout in model.seasonals
    ]

    kept = draws - burn
    out_sigma_level = np.empty(kept)
    out_sigma_slope = np.empty(kept)
    out_sigma_obs = np.empty(kept)
    out_sigma_seasonal = np.empty((kept, n_seasonal))
    out_d = np.empty(kept)
    out_phi = np.empty(kept)
    out_gamma = np.zeros((kept, j_total), dtype=np.int64)
    out_beta = np.zeros((kept, j_total))
    out_terminal = np.empty((kept, model.state_dim))

    for it in range(draws):
        params = ParamPoint(
            sigma_level=sigma_level,
            sigma_slope=sigma_slope,
            sigma_obs=sigma_obs,
            sigma_seasonal=tuple(sigma_seasonal),
            d=d,
            phi=phi,
            beta=beta,
        )
        try:
            states = ffbs_sample(model, params, y, rng, x=design if j_total else None)
        except NumericalError as exc:
            raise NumericalError(f"MCMC aborted at draw {it}: {exc}") from exc

        level = states[:, 0]
        slope = states[:, 1]
        u = level[1:] - level[:-1] - slope[:-1]
        sigma_level = float(np.sqrt(_draw_variance(tp.level_var, float(u @ u), n - 1, rng)))
        v = slope[1:] - (d + phi * (slope[:-1] - d))
        sigma_slope = float(np.sqrt(_draw_variance(tp.slope_var, float(v @ v), n - 1, rng)))
        slope_var = sigma_slope**2

        for s_idx, layout in enumerate(model.seasonals):
            steps = boundary_steps[s_idx]
            i0 = layout.state_start
            dim = layout.state_dim
            if steps.size:
                w = states[steps + 1, i0] + states[steps][:, i0 : i0 + dim].sum(axis=1)
                ss = float(w @ w)
            else:
                ss = 0.0
            sigma_seasonal[s_idx] = float(
                np.sqrt(_draw_variance(layout.var_prior, ss, int(steps.size), rng))
            )

        # D | slope path, phi: z_t = slope_{t+1} - phi slope_t = D(1-phi) + v_t
        zt = slope[1:] - phi * slope[:-1]
        prec = 1.0 / tp.d_sd**2 + (n - 1) * (1.0 - phi) ** 2 / slope_var
        mean = (tp.d_mean / tp.d_sd**2 + (1.0 - phi) * float(np.sum(zt)) / slope_var) / prec
        d = float(mean + rng.standard_normal() / np.sqrt(prec))

        # phi | slope path, D: (slope_{t+1} - D) = phi (slope_t - D) + v_t
        centered = slope - d
        sxx = float(centered[:-1] @ centered[:-1])
        sxy = float(centered[:-1] @ centered[1:])
        prec = 1.0 / tp.phi_sd**2 + sxx / slope_var
        mean = (tp.phi_mean / tp.phi_sd**2 + sxy / slope_var) / prec
        phi = _draw_truncated_normal(mean, float(1.0 / np.sqrt(prec)), -1.0, 1.0, rng)

        residual = y - states @ model.z
        if j_total:
            gamma, beta, sigma_obs = sample_regression(residual, design[:n], gamma, reg_settings, rng)
        else:
            ss = float(residual @ residual)
            sigma_obs = float(np.sqrt(_draw_variance(model.obs_var_prior, ss, n, rng)))

        if it >= burn:
            k = it - burn
            out_sigma_level[k] = sigma_level
            out_sigma_slope[k] = sigma_slope
            out_sigma_obs[k] = sigma_obs
            out_sigma_seasonal[k] = sigma_seasonal
            out_d[k] = d
            out_phi[k] = phi
            if j_total:
                out_gamma[k] = gamma
                out_beta[k] = beta
            out_terminal[k] = states[-1]

    return PosteriorDraws(
        sigma_level=out_sigma_level,
        sigma_slope=out_sigma_slope,
        sigma_obs=out_sigma_obs,
        sigma_seasonal=out_sigma_seasonal,
        d=out_d,
        phi=out_phi,
        gamma=out_gamma,
        beta=out_beta,
        terminal_state=out_terminal,
        requested=draws,
        burn=burn,
        seed=seed,
        seasonal_names=tuple(s.name for s in model.seasonals),
        design_names=model.design_names,
    )


@dataclass(frozen=True)
class ForecastResult:
    mean: np.ndarray  # (h,)
    lower95: np.ndarray
    upper95: np.ndarray
    paths: np.ndarray  # (K, h) per-draw sampled paths


def posterior_forecast(
    draws: PosteriorDraws,
    model: StateSpaceModel,
    horizon: int,
    x_future: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    sample: bool = True,
) -> ForecastResult:
    """Model-averaged forecast from the terminal states of every draw.

    Point forecast is the mean over per-draw sampled paths; the interval is
    the empirical 2.5%/97.5% band. With sample=False innovations and
    observation noise are suppressed and each path is the deterministic
    propagation of its draw.
    """
    if not 1 <= horizon <= model.max_horizon:
        raise RangeError(f"horizon must lie in 1..{model.max_horizon}, got {horizon}")
    if rng is None:
        rng = np.random.default_rng([draws.seed, _FORECAST_SALT])
    if model.n_regressors == 0:
        x_future = None
    paths = np.empty((draws.n_draws, horizon))
    for k in range(draws.n_draws):
        paths[k] = forecast_path(
            model, draws.param_point(k), draws.terminal_state[k], horizon, x_future,
            rng if sample else None,
        )
    lower, upper = np.percentile(paths, [2.5, 97.5], axis=0)
    return ForecastResult(mean=paths.mean(axis=0), lower95=lower, upper95=upper, paths=paths)


def _first_t_with_mask(model: StateSpaceModel, key: tuple[bool, ...]) -> int:
    for t in range(model.period):
        if model.boundary_mask(t) == key:
            return t
    raise AssertionError("mask not present in schedule")


def forecast_anchors(
    model: StateSpaceModel,
    draws: PosteriorDraws,
    y: Sequence[float],
    anchors: Sequence[int],
    horizons: Sequence[int],
    x: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    thin: int = 1,
) -> dict[int, dict[str, np.ndarray]]:
    """Forecast y_{t+h} from every anchor t using one filter pass per draw.

    The filter consumes all observations up to and including each anchor, so a
    forecast at anchor t depends only on y_0..y_t. Draw parameters may be
    thinned (every `thin`-th draw) to bound the cost of long anchor sweeps.
    Returns {h: {"mean", "lower95", "upper95"} arrays over anchors}.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    anchors = np.asarray(sorted(anchors), dtype=np.int64)
    horizons = sorted(set(int(h) for h in horizons))
    if not horizons or horizons[0] < 1:
        raise RangeError("horizons must be >= 1")
    max_h = horizons[-1]
    if anchors.size == 0:
        raise RangeError("at least one anchor is required")
    if anchors[0] < 0 or anchors[-1] + max_h > n - 1:
        raise RangeError("anchors plus the longest horizon must stay inside the series")
    if thin < 1:
        raise RangeError("thin must be >= 1")
    if rng is None:
        rng = np.random.default_rng([draws.seed, _FORECAST_SALT, 1])

    keep = np.arange(0, draws.n_draws, thin)
    K = keep.size
    m = model.state_dim
    z = model.z
    phi = draws.phi[keep]
    dvec = draws.d[keep]
    obs_var = draws.sigma_obs[keep] ** 2
    obs_sd = draws.sigma_obs[keep]
    level_var = draws.sigma_level[keep] ** 2
    slope_var = draws.sigma_slope[keep] ** 2
    seasonal_var = draws.sigma_seasonal[keep] ** 2 if len(model.seasonals) else np.zeros((K, 0))

    if model.n_regressors:
        if x is None:
            raise SchemaError("x covering the whole series is required with regressors")
        x = np.asarray(x, dtype=float)
        if x.shape[0] < n:
            raise SchemaError(f"x has {x.shape[0]} rows, series has {n}")
        offsets = x[:n] @ draws.beta[keep].T  # (n, K)
    else:
        offsets = np.zeros((n, K))

    period = model.period
    mask_of_t = [model.boundary_mask(t % period) for t in range(period)]
    stacks: dict[tuple[bool, ...], np.ndarray] = {}
    noise: dict[tuple[bool, ...], np.ndarray] = {}
    for key in set(mask_of_t):
        template = model.transition_matrix(0.0, _first_t_with_mask(model, key))
        stack = np.broadcast_to(template, (K, m, m)).copy()
        stack[:, 1, 1] = phi
        stacks[key] = stack
        q = np.zeros((K, m))
        q[:, 0] = level_var
        q[:, 1] = slope_var
        for s_idx, (layout, boundary) in enumerate(zip(model.seasonals, key)):
            if boundary:
                q[:, layout.state_start] = seasonal_var[:, s_idx]
        noise[key] = q

    c = np.zeros((K, m))
    c[:, 1] = (1.0 - phi) * dvec

    a = np.broadcast_to(model.a1, (K, m)).copy()
    P = np.broadcast_to(np.diag(model.p1_diag), (K, m, m)).copy()

    anchor_set = set(int(t) for t in anchors)
    results = {h: np.empty((anchors.size, 3)) for h in horizons}
    anchor_pos = {int(t): i for i, t in enumerate(anchors)}
    eye = np.eye(m)

    for t in range(int(anchors[-1]) + 1):
        pz = P @ z  # (K, m)
        f = pz @ z + obs_var
        v = y[t] - (a @ z + offsets[t])
        informative = f > 0.0
        gain = np.where(informative[:, None], pz / np.where(informative, f, 1.0)[:, None], 0.0)
        a = a + gain * v[:, None]
        P = P - gain[:, :, None] * pz[:, None, :]
        P = (P + P.transpose(0, 2, 1)) / 2.0

        if t in anchor_set:
            tr = np.einsum("kii->k", P)
            jitter = 1e-12 + 1e-10 * np.abs(tr) / m
            try:
                chol = np.linalg.cholesky(P + jitter[:, None, None] * eye)
            except np.linalg.LinAlgError:
                chol = np.linalg.cholesky(P + (jitter * 1e6 + 1e-8)[:, None, None] * eye)
            alpha = a + np.einsum("kij,kj->ki", chol, rng.standard_normal((K, m)))
            for h in range(1, max_h + 1):
                key = mask_of_t[(t + h - 1) % period]
                alpha = np.einsum("kij,kj->ki", stacks[key], alpha) + c
                alpha = alpha + np.sqrt(noise[key]) * rng.standard_normal((K, m))
                if h in results:
                    ypred = alpha @ z + offsets[t + h] + obs_sd * rng.standard_normal(K)
                    i = anchor_pos[t]
                    results[h][i, 0] = ypred.mean()
                    results[h][i, 1:] = np.percentile(ypred, [2.5, 97.5])

        if t == int(anchors[-1]):
            break
        key = mask_of_t[t % period]
        a = np.einsum("kij,kj->ki", stacks[key], a) + c
        P = stacks[key] @ P @ stacks[key].transpose(0, 2, 1)
        P[:, np.arange(m), np.arange(m)] += noise[key]

    return {
        h: {"mean": results[h][:, 0], "lower95": results[h][:, 1], "upper95": results[h][:, 2]}
        for h in horizons
    }

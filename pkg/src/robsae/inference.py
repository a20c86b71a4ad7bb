"""Posterior moments, interval estimates and data-driven choice of gamma."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ._backend import kernels
from .estimator import DEFAULT_CONFIG, SolverConfig, fit_gamma, fit_ml
from .model import (AreaDataset, AreaInference, GammaFit, ModelParams, NotConverged,
                    upper_quantile)
from .objective import LOG_2PI

log = logging.getLogger(__name__)

S2_FLOOR = 1e-6

GRID_PRESETS = {
    "default": np.arange(101) / 100.0,
    "app": np.arange(61) / 200.0,
    "coarse": np.arange(4) / 10.0,
}


@dataclass(frozen=True, eq=False)
class GammaGrid:
    """Candidate gamma values (ascending, starting at 0) and the criterion weights."""

    values: np.ndarray = field(default_factory=lambda: GRID_PRESETS["default"])
    weights_mode: str = "unit"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        mode = self.weights_mode.lower().replace("-", "_")
        if mode not in ("unit", "inv_d"):
            raise ValueError(f"weights_mode must be 'unit' or 'inv_d', got {self.weights_mode!r}")
        object.__setattr__(self, "weights_mode", mode)
        if v.size == 0 or v[0] != 0.0:
            raise ValueError("gamma grid must start at exactly 0")
        if np.any(np.diff(v) <= 0) or v[-1] > 1.0:
            raise ValueError("gamma grid must be strictly ascending within [0, 1]")

    @classmethod
    def preset(cls, name: str, weights_mode: str = "unit") -> "GammaGrid":
        return cls(GRID_PRESETS[name], weights_mode)

    def weights(self, D: np.ndarray) -> np.ndarray:
        return np.ones_like(D) if self.weights_mode == "unit" else 1.0 / D


@dataclass(frozen=True, eq=False)
class GammaSelection:
    gamma_op: float
    index: int
    grid: GammaGrid
    criterion: np.ndarray
    fits: List[GammaFit]
    converged: np.ndarray


def posterior_moments(y, x, D, params: ModelParams):
    s = params.A + D
    r = y - np.dot(x, params.beta)
    return y - D / s * r, params.A * D / s


def robust_posterior_moments(y, x, D, params: ModelParams, gamma: float):
    """Tweedie-type posterior mean and variance under the gamma-divergence.

    Returns ``(theta, s2_raw, s2, floored)`` where ``s2`` is ``s2_raw`` floored at
    ``S2_FLOOR * D``.  ``gamma == 0`` reproduces :func:`posterior_moments`.
    """
    if gamma == 0:
        theta, s2 = posterior_moments(y, x, D, params)
        return theta, s2, s2, False
    s = params.A + D
    r = y - np.dot(x, params.beta)
    w = math.exp(-gamma / (2.0 * (1.0 + gamma)) * (LOG_2PI + math.log(s)) - 0.5 * gamma * r * r / s)
    theta = y - w * D / s * r
    s2_raw = D + w * D * D / (s * s) * (gamma * r * r - s)
    floor = S2_FLOOR * D
    return theta, s2_raw, max(s2_raw, floor), s2_raw < floor


def area_moments(data: AreaDataset, params: ModelParams, gamma: float):
    """Vectorised :func:`robust_posterior_moments` over all areas."""
    theta, s2_raw = kernels.robust_moments(data.y, data.X, data.D, params.beta, params.A, gamma)
    floor = S2_FLOOR * data.D
    floored = s2_raw < floor
    return theta, s2_raw, np.where(floored, floor, s2_raw), floored


def tweedie_check(y, x, D, params: ModelParams, gamma: float):
    """Closed-form moments minus their finite-difference Tweedie counterparts.

    The derivatives of the log-objective are taken by central differences in y
    with step ``1e-5 * (1 + |y|)``; the objective increments are formed from the
    exponent differences so the second difference keeps full precision.
    ``gamma == 0`` uses the marginal log-density and :func:`posterior_moments`.
    """
    s = params.A + D
    r = y - np.dot(x, params.beta)
    h = 1e-5 * (1.0 + abs(y))
    # exponent increments of the log-density for y -> y +/- h
    d_up = -((r + h) ** 2 - r * r) / (2.0 * s)
    d_dn = -((r - h) ** 2 - r * r) / (2.0 * s)
    if gamma == 0:
        f_up, f_dn = d_up, d_dn
        theta, s2 = posterior_moments(y, x, D, params)
    else:
        lw = -gamma / (2.0 * (1.0 + gamma)) * (LOG_2PI + math.log(s)) - 0.5 * gamma * r * r / s
        w = math.exp(lw)
        f_up = w * math.expm1(gamma * d_up) / gamma
        f_dn = w * math.expm1(gamma * d_dn) / gamma
        theta, s2, _, _ = robust_posterior_moments(y, x, D, params, gamma)
    first = (f_up - f_dn) / (2.0 * h)
    second = (f_up + f_dn) / (h * h)
    return theta - (y + D * first), s2 - (D + D * D * second)


def make_interval(theta, s2, alpha: float):
    half = upper_quantile(alpha) * np.sqrt(s2)
    return theta - half, theta + half


def direct_interval(y, D, alpha: float):
    half = upper_quantile(alpha) * np.sqrt(D)
    return y - half, y + half


def criterion_value(data: AreaDataset, fit: GammaFit, grid: GammaGrid) -> float:
    _, _, s2, _ = area_moments(data, fit.params, fit.gamma)
    return float(np.sum(grid.weights(data.D) * s2))


def fit_path(data: AreaDataset, gammas: Sequence[float], config: SolverConfig = DEFAULT_CONFIG,
             warm_start: bool = True) -> List[GammaFit]:
    """Fits for each gamma in ascending order, warm-starting from the previous one."""
    ml = fit_ml(data, config)
    fits = []
    prev: Optional[GammaFit] = None
    for g in gammas:
        fit = fit_gamma(data, float(g), config, warm=prev if warm_start else None, ml=ml)
        fits.append(fit)
        if g > 0:
            prev = fit
    return fits


def select_gamma(data: AreaDataset, grid: Optional[GammaGrid] = None,
                 config: SolverConfig = DEFAULT_CONFIG, warm_start: bool = True) -> GammaSelection:
    """Choose gamma minimising the weighted total of robust posterior variances.

    Ties go to the smallest gamma.  Grid points whose fit did not converge are
    left out of the argmin and logged.
    """
    grid = grid or GammaGrid()
    fits = fit_path(data, grid.values, config, warm_start)
    crit = np.array([criterion_value(data, f, grid) for f in fits])
    ok = np.array([f.converged for f in fits])
    if not ok.all():
        log.warning("excluding non-converged gamma values %s", grid.values[~ok].tolist())
    if not ok.any():
        raise NotConverged("no gamma in the grid produced a converged fit")
    best = argmin_smallest_gamma(grid.values, crit, ok)
    return GammaSelection(float(grid.values[best]), best, grid, crit, fits, ok)


def argmin_smallest_gamma(gammas, crit, ok) -> int:
    """Index of the minimum criterion among usable points; ties go to the smallest gamma."""
    best = -1
    for k in range(len(gammas)):
        if not ok[k]:
            continue
        if best < 0 or crit[k] < crit[best] or (crit[k] == crit[best] and gammas[k] < gammas[best]):
            best = k
    return best


@dataclass(frozen=True, eq=False)
class MethodResult:
    """Per-area arrays for one interval method (EB, GD or DR)."""

    method: str
    gamma: float
    theta: np.ndarray
    s2: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    s2_floored: np.ndarray

    def areas(self) -> List[AreaInference]:
        return [AreaInference(float(t), float(v), float(lo), float(hi), self.method, self.gamma, bool(f))
                for t, v, lo, hi, f in zip(self.theta, self.s2, self.lower, self.upper, self.s2_floored)]


@dataclass(frozen=True, eq=False)
class Analysis:
    eb: MethodResult
    gd: MethodResult
    dr: MethodResult
    selection: GammaSelection
    alpha: float

    @property
    def eb_fit(self) -> GammaFit:
        return self.selection.fits[0]

    @property
    def gd_fit(self) -> GammaFit:
        return self.selection.fits[self.selection.index]

    def methods(self):
        return (self.eb, self.gd, self.dr)


def method_result(data: AreaDataset, fit: GammaFit, alpha: float, method: str) -> MethodResult:
    theta, _, s2, floored = area_moments(data, fit.params, fit.gamma)
    lo, hi = make_interval(theta, s2, alpha)
    return MethodResult(method, fit.gamma, theta, s2, lo, hi, floored)


def direct_result(data: AreaDataset, alpha: float) -> MethodResult:
    lo, hi = direct_interval(data.y, data.D, alpha)
    return MethodResult("DR", 0.0, data.y.copy(), data.D.copy(), lo, hi, np.zeros(data.m, bool))


def analyze(data: AreaDataset, grid: Optional[GammaGrid] = None, alpha: float = 0.05,
            config: SolverConfig = DEFAULT_CONFIG) -> Analysis:
    """EB, gamma-selected GD and direct estimates with (1 - alpha) intervals."""
    sel = select_gamma(data, grid, config)
    eb = method_result(data, sel.fits[0], alpha, "EB")
    gd = method_result(data, sel.fits[sel.index], alpha, "GD")
    return Analysis(eb, gd, direct_result(data, alpha), sel, alpha)


def population_Q(params: ModelParams, D_values, gamma: float) -> float:
    """Expected ``s2_raw - D`` at the true parameters under the assumed model, averaged over D."""
    D = np.asarray(D_values, dtype=float)
    s = params.A + D
    return -float(np.mean(D * D / s * np.exp(-gamma / (2.0 * (1.0 + gamma)) * np.log(2.0 * np.pi * s))
                          * (1.0 + gamma) ** -1.5))

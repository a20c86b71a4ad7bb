"""Monte Carlo scenarios, coverage/MSE harness and the separability diagnostic."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .estimator import DEFAULT_CONFIG, SolverConfig, fit_gamma, fit_ml
from .inference import GammaGrid, MethodResult, analyze, method_result
from .model import AreaDataset, ModelParams, NotConverged, SAEError
from .quadrature import adaptive_gauss_legendre

log = logging.getLogger(__name__)

SCENARIOS = ("I", "II", "III", "IV", "V")
CONTAMINATION_PRESETS = {"IV": (0.05, 10.0, 1.0), "V": (0.10, 10.0, 1.0)}
MAX_FAILURE_FRACTION = 0.05

# variate roles for the counter-based streams
ROLE_X1, ROLE_X2, ROLE_U, ROLE_MIX, ROLE_DELTA, ROLE_Z = range(6)


class SimulationFailed(NotConverged):
    pass


@dataclass(frozen=True)
class Contamination:
    """Huber mixture on the standardised random effect: N(mean, var) with probability omega."""

    omega: float
    mean: float
    var: float

    def __post_init__(self):
        if not 0 <= self.omega < 0.5:
            raise ValueError("contamination ratio must lie in [0, 1/2)")
        if not self.var > 0:
            raise ValueError("contamination variance must be positive")


@dataclass(frozen=True)
class SimScenario:
    id: str = "I"
    A: float = 1.0
    m: int = 100
    beta: Tuple[float, ...] = (0.0, -1.0, 1.0)
    d_pattern: Tuple[float, ...] = (0.2, 0.6, 1.0, 1.4, 2.0)
    contamination: Optional[Contamination] = None

    def __post_init__(self):
        sid = str(self.id).upper()
        if sid not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.id!r}")
        object.__setattr__(self, "id", sid)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "d_pattern", tuple(float(d) for d in self.d_pattern))
        if len(self.beta) != 3:
            raise ValueError("beta must hold (intercept, normal slope, Bernoulli slope)")
        if self.m % len(self.d_pattern):
            raise ValueError("m must be divisible by the number of D groups")
        if not self.A > 0 or min(self.d_pattern) <= 0:
            raise ValueError("A and the D pattern must be positive")
        if self.contamination is None and sid in CONTAMINATION_PRESETS:
            object.__setattr__(self, "contamination", Contamination(*CONTAMINATION_PRESETS[sid]))

    @property
    def D(self) -> np.ndarray:
        return np.repeat(self.d_pattern, self.m // len(self.d_pattern))


def _draw_u(scenario: SimScenario, seed: int, attempt: int) -> np.ndarray:
    m = scenario.m
    g = rng.stream(seed, ROLE_U, attempt)
    if scenario.id == "II":
        u = np.exp(g.standard_normal(m))
    elif scenario.id == "III":
        u = np.tan(np.pi * (g.random(m) - 0.5))
    else:
        u = g.standard_normal(m)
    c = scenario.contamination
    if c is not None and c.omega > 0:
        pick = rng.stream(seed, ROLE_MIX, attempt).random(m) < c.omega
        delta = c.mean + math.sqrt(c.var) * rng.stream(seed, ROLE_DELTA, attempt).standard_normal(m)
        u = np.where(pick, delta, u)
    return u


def generate_replication(scenario: SimScenario, seed: int, max_attempts: int = 100):
    """One simulated dataset and its true small-area means.

    Non-finite draws are rejected and redrawn from the next substream; the
    number of rejections is returned third.
    """
    m = scenario.m
    x1 = rng.stream(seed, ROLE_X1).standard_normal(m)
    x2 = (rng.stream(seed, ROLE_X2).random(m) < 0.5).astype(float)
    X = np.column_stack([np.ones(m), x1, x2])
    D = scenario.D
    mean = X @ np.asarray(scenario.beta)
    for attempt in range(max_attempts):
        theta = mean + math.sqrt(scenario.A) * _draw_u(scenario, seed, attempt)
        y = theta + np.sqrt(D) * rng.stream(seed, ROLE_Z, attempt).standard_normal(m)
        if np.all(np.isfinite(y)):
            return AreaDataset(y, D, X), theta, attempt
    raise SAEError(f"no finite draw after {max_attempts} attempts")


def replication_metrics(theta_true: np.ndarray, res: MethodResult):
    """(sum of squared errors, number covered, sum of interval lengths) for one replication."""
    err = res.theta - theta_true
    covered = (res.lower <= theta_true) & (theta_true <= res.upper)
    return float(np.dot(err, err)), int(np.count_nonzero(covered)), float(np.sum(res.upper - res.lower))


@dataclass
class MethodSummary:
    mse: float
    cp: float
    al: float


@dataclass
class SimReport:
    scenario: Dict
    n_replications: int
    n_areas: int
    alpha: float
    methods: Dict[str, MethodSummary]
    gamma_mean: float = 0.0
    gamma_median: float = 0.0
    gamma_zero_fraction: float = 1.0
    n_nonconverged: int = 0
    n_grid_nonconverged: int = 0
    n_redraws: int = 0
    fixed_gamma: Optional[float] = None
    gamma_op: List[float] = field(default_factory=list, repr=False)
    eb_A: List[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict:
        out = asdict(self)
        out.pop("gamma_op")
        out.pop("eb_A")
        return out


class _Accumulator:
    def __init__(self, names):
        self.names = names
        self.sse = {k: 0.0 for k in names}
        self.cov = {k: 0 for k in names}
        self.length = {k: 0.0 for k in names}

    def add(self, parts):
        for k, (sse, cov, length) in parts.items():
            self.sse[k] += sse
            self.cov[k] += cov
            self.length[k] += length

    def summaries(self, n_obs):
        return {k: MethodSummary(self.sse[k] / n_obs, 100.0 * self.cov[k] / n_obs, self.length[k] / n_obs)
                for k in self.names}


def _default_threads() -> int:
    env = os.environ.get("SAE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map_ordered(fn, items, threads):
    if threads is None:
        threads = _default_threads()
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _scenario_echo(scenario: SimScenario, base_seed: int) -> Dict:
    echo = asdict(scenario)
    echo["base_seed"] = base_seed
    return echo


def _check_failures(n_failed: int, R: int):
    if n_failed > MAX_FAILURE_FRACTION * R:
        raise SimulationFailed(f"{n_failed} of {R} replications failed to converge")


def run_monte_carlo(scenario: SimScenario, R: int, grid: Optional[GammaGrid] = None,
                    alpha: float = 0.05, base_seed: int = 0,
                    config: SolverConfig = DEFAULT_CONFIG, threads: Optional[int] = 1) -> SimReport:
    """MSE, coverage and average interval length of EB, GD and DR over R replications."""
    if R < 1:
        raise ValueError("R must be at least 1")
    grid = grid or GammaGrid()

    def one(r):
        data, theta, redraws = generate_replication(scenario, rng.replication_seed(base_seed, r))
        try:
            res = analyze(data, grid, alpha, config)
        except NotConverged:
            return None, redraws
        if not res.eb_fit.converged:
            return None, redraws
        parts = {m.method: replication_metrics(theta, m) for m in res.methods()}
        n_bad = int(np.count_nonzero(~res.selection.converged))
        return (parts, res.selection.gamma_op, res.eb_fit.params.A, n_bad), redraws

    results = _map_ordered(one, range(R), threads)
    acc = _Accumulator(("EB", "GD", "DR"))
    gammas, eb_A = [], []
    n_failed = n_redraws = n_grid_bad = 0
    for out, redraws in results:
        n_redraws += redraws
        if out is None:
            n_failed += 1
            continue
        parts, g, A, n_bad = out
        acc.add(parts)
        gammas.append(g)
        eb_A.append(A)
        n_grid_bad += n_bad
    _check_failures(n_failed, R)
    n_ok = R - n_failed
    g = np.asarray(gammas)
    return SimReport(
        scenario=_scenario_echo(scenario, base_seed), n_replications=R, n_areas=scenario.m,
        alpha=alpha, methods=acc.summaries(n_ok * scenario.m),
        gamma_mean=float(np.mean(g)), gamma_median=float(np.median(g)),
        gamma_zero_fraction=float(np.mean(g == 0.0)), n_nonconverged=n_failed,
        n_grid_nonconverged=n_grid_bad, n_redraws=n_redraws, gamma_op=gammas, eb_A=eb_A)


def run_fixed_gamma_study(scenario: SimScenario, gammas: Sequence[float], R: int,
                          alpha: float = 0.05, base_seed: int = 0,
                          config: SolverConfig = DEFAULT_CONFIG,
                          threads: Optional[int] = 1) -> List[SimReport]:
    """Coverage and length of the GD interval at each fixed gamma (no selection)."""
    if R < 1:
        raise ValueError("R must be at least 1")
    gammas = [float(g) for g in gammas]
    order = sorted(range(len(gammas)), key=lambda k: gammas[k])

    def one(r):
        data, theta, redraws = generate_replication(scenario, rng.replication_seed(base_seed, r))
        ml = fit_ml(data, config)
        fits = [None] * len(gammas)
        prev = None
        for k in order:
            fits[k] = fit_gamma(data, gammas[k], config, warm=prev, ml=ml)
            if gammas[k] > 0:
                prev = fits[k]
        out = []
        for k, fit in enumerate(fits):
            if not fit.converged:
                out.append(None)
            else:
                out.append(replication_metrics(theta, method_result(data, fit, alpha, "GD")))
        return out, redraws

    results = _map_ordered(one, range(R), threads)
    reports = []
    for k, g in enumerate(gammas):
        acc = _Accumulator(("GD",))
        n_failed = n_redraws = 0
        for out, redraws in results:
            n_redraws += redraws
            if out[k] is None:
                n_failed += 1
            else:
                acc.add({"GD": out[k]})
        _check_failures(n_failed, R)
        reports.append(SimReport(
            scenario=_scenario_echo(scenario, base_seed), n_replications=R, n_areas=scenario.m,
            alpha=alpha, methods=acc.summaries((R - n_failed) * scenario.m),
            gamma_mean=g, gamma_median=g, gamma_zero_fraction=float(g == 0.0),
            n_nonconverged=n_failed, n_redraws=n_redraws, fixed_gamma=g))
    return reports


def separability_rho(params: ModelParams, delta_mean: float, delta_var: float,
                     D_range: Tuple[float, float], x_grid: Sequence[float], gamma: float,
                     tol: float = 1e-10) -> float:
    """Overlap between the contamination marginal and the gamma-powered genuine marginal.

    Maximises over k in {0, 1, 2}, D on {low, 5 interior points, high} and the
    supplied values of x'beta; ``params.beta`` is unused because ``x_grid`` holds
    the linear predictors directly.
    """
    if not gamma > 0 or not delta_var > 0:
        raise ValueError("gamma and delta_var must be positive")
    lo, hi = float(D_range[0]), float(D_range[1])
    D_grid = np.unique(np.linspace(lo, hi, 7))
    A = params.A
    best = 0.0
    for D in D_grid:
        sd_c = math.sqrt(delta_var + D)
        for xb in np.asarray(x_grid, dtype=float):
            s = A + D
            sd_g = math.sqrt(s / gamma)
            a = min(delta_mean - 12 * sd_c, xb - 12 * sd_g)
            b = max(delta_mean + 12 * sd_c, xb + 12 * sd_g)
            # the integrand is concentrated around the product-Gaussian peak
            prec = 1.0 / sd_c ** 2 + gamma / s
            centre = (delta_mean / sd_c ** 2 + gamma * xb / s) / prec
            spread = 12.0 / math.sqrt(prec)
            pts = np.linspace(centre - spread, centre + spread, 9)
            for k in (0, 1, 2):
                def integrand(y, k=k, xb=xb, s=s, sd_c=sd_c):
                    zc = (y - delta_mean) / sd_c
                    log_fd = -0.5 * zc * zc - math.log(sd_c * math.sqrt(2 * math.pi))
                    log_phi = -0.5 * (y - xb) ** 2 / s - 0.5 * math.log(2 * math.pi * s)
                    return np.exp(log_fd + gamma * log_phi) * np.abs(y - xb) ** k
                best = max(best, adaptive_gauss_legendre(integrand, a, b, tol, points=pts))
    return best

"""Maximum likelihood and gamma-divergence estimation of (beta, A)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._backend import kernels
from .model import A_MIN, AreaDataset, GammaFit, ModelParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and start policy shared by both estimators.

    ``grad_tol`` bounds the max-norm of the gradient divided by the number of areas.
    """

    grad_tol: float = 1e-8
    max_iter: int = 200
    n_starts: int = 3
    step_shrink: float = 0.5

    def __post_init__(self):
        if not (self.grad_tol > 0 and self.max_iter > 0 and self.n_starts >= 1):
            raise ValueError("grad_tol, max_iter must be positive and n_starts >= 1")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")


DEFAULT_CONFIG = SolverConfig()


def fit_ml(data: AreaDataset, config: SolverConfig = DEFAULT_CONFIG) -> GammaFit:
    """Maximise the marginal likelihood.

    Alternates the closed-form GLS update of beta with a Newton step on
    ``tau = log(A - A_MIN)``.  When the likelihood increases towards the boundary
    A is clamped at ``A_MIN`` and ``a_floored`` is set.
    """
    beta, A, converged, it, gnorm, value, floored = kernels.fit_ml(
        data.y, data.X, data.D, config.grad_tol, config.max_iter, config.step_shrink, A_MIN)
    if not converged:
        log.warning("ML fit stopped after %d iterations (grad %.3g)", it, gnorm)
    return GammaFit(0.0, ModelParams(beta, max(A, A_MIN)), converged, it, gnorm, value, floored)


def _start_points(ml: GammaFit, warm: Optional[GammaFit], n_starts: int):
    base = ml.params
    starts = [(base.beta, base.A)]
    if warm is not None and len(starts) < n_starts:
        starts.append((warm.params.beta, warm.params.A))
    perturb = [(1.1, 0.5), (0.9, 2.0), (1.1, 2.0), (0.9, 0.5)]
    k = 0
    while len(starts) < n_starts:
        bs, As = perturb[k % len(perturb)]
        starts.append((base.beta * bs, max(base.A * As, 2 * A_MIN)))
        k += 1
    return starts


def fit_gamma(data: AreaDataset, gamma: float, config: SolverConfig = DEFAULT_CONFIG,
              warm: Optional[GammaFit] = None, ml: Optional[GammaFit] = None) -> GammaFit:
    """Maximise the summed gamma-divergence pseudo-likelihood.

    Runs BFGS from up to ``config.n_starts`` starting points: the ML fit, the fit
    ``warm`` from a neighbouring gamma when given, then perturbations of the ML
    fit.  The start reaching the highest objective wins; converged runs are
    preferred over non-converged ones.
    """
    if not 0 <= gamma <= 1:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma!r}")
    if ml is None:
        ml = fit_ml(data, config)
    if gamma == 0:
        return ml
    best = None
    for beta0, A0 in _start_points(ml, warm, config.n_starts):
        beta, A, converged, it, gnorm, shifted = kernels.fit_gamma(
            data.y, data.X, data.D, beta0, A0, gamma,
            config.grad_tol, config.max_iter, config.step_shrink, A_MIN)
        if not (math.isfinite(shifted) and np.all(np.isfinite(beta)) and math.isfinite(A)):
            continue
        key = (converged, shifted)
        if best is None or key > best[0]:
            best = (key, beta, A, converged, it, gnorm, shifted)
    if best is None:
        return GammaFit(gamma, ml.params, False, config.max_iter, math.inf, -math.inf)
    _, beta, A, converged, it, gnorm, shifted = best
    if not converged:
        log.warning("gamma=%g fit did not converge (grad %.3g)", gamma, gnorm)
    A = max(A, A_MIN)
    return GammaFit(gamma, ModelParams(beta, A), converged, it, gnorm,
                    shifted + data.m / gamma, a_floored=A <= 2 * A_MIN)

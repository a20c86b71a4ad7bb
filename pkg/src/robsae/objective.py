"""Marginal log-likelihood and gamma-divergence objectives with analytic scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .model import AreaDataset, ModelParams, normal_logpdf

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ObjectiveValue:
    """Objective value and gradient ordered as (d/d beta, d/d A)."""

    value: float
    grad: np.ndarray


def marginal_loglik(data: AreaDataset, params: ModelParams) -> ObjectiveValue:
    value, grad = kernels.ml_obj_grad(data.y, data.X, data.D, params.beta, params.A)
    return ObjectiveValue(value, np.asarray(grad))


def log_weight(y, x, D, params: ModelParams, gamma: float):
    """``log(phi(y; x'beta, A+D)**gamma * c_gamma)`` evaluated without forming phi."""
    s = params.A + D
    r = y - np.dot(x, params.beta)
    return -gamma / (2.0 * (1.0 + gamma)) * (LOG_2PI + np.log(s)) - 0.5 * gamma * r * r / s


def gamma_term(y: float, x, D: float, params: ModelParams, gamma: float) -> float:
    """Per-area gamma-divergence pseudo-likelihood ``phi**gamma * c_gamma / gamma``.

    ``c_gamma = (2 pi (A + D))**(gamma**2 / (2 (1 + gamma)))`` depends on the area
    through ``D``.
    """
    if not gamma > 0:
        raise ValueError("gamma_term requires gamma > 0")
    return math.exp(float(log_weight(y, x, D, params, gamma))) / gamma


def gamma_objective(data: AreaDataset, params: ModelParams, gamma: float) -> ObjectiveValue:
    """Sum of :func:`gamma_term` over areas with its analytic gradient."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma!r}")
    shifted, grad = kernels.gamma_obj_grad(data.y, data.X, data.D, params.beta, params.A, gamma)
    return ObjectiveValue(shifted + data.m / gamma, np.asarray(grad))


def marginal_logdensity(y, x, D, params: ModelParams):
    return normal_logpdf(y, np.dot(x, params.beta), params.A + D)


def _fd_step(v: float) -> float:
    return 1e-6 * max(1.0, abs(v))


def finite_difference_grad(fun, params: ModelParams) -> np.ndarray:
    """Central differences of ``fun(ModelParams) -> float`` in (beta, A)."""
    vec = params.as_vector()
    out = np.empty_like(vec)
    for k in range(vec.size):
        h = _fd_step(vec[k])
        if k == vec.size - 1:
            h = min(h, 0.5 * (vec[k] - 1e-8))
        up, dn = vec.copy(), vec.copy()
        up[k] += h
        dn[k] -= h
        f_up = fun(ModelParams(up[:-1], up[-1]))
        f_dn = fun(ModelParams(dn[:-1], dn[-1]))
        out[k] = (f_up - f_dn) / (2.0 * h)
    return out

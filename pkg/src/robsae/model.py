"""Domain types, dataset validation and Gaussian primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

A_MIN = 1e-8
RANK_RTOL = 1e-10

_SQRT2 = math.sqrt(2.0)
_LOG_2PI = math.log(2.0 * math.pi)


class SAEError(Exception):
    """Base class for all errors raised by the package."""


class ValidationError(SAEError, ValueError):
    pass


class NonPositiveVariance(ValidationError):
    def __init__(self, index: Optional[int] = None):
        self.index = index
        where = "" if index is None else f" at area {index}"
        super().__init__(f"sampling variance must be positive{where}")


class RankDeficient(ValidationError):
    def __init__(self, rank: int, p: int):
        self.rank, self.p = rank, p
        super().__init__(f"covariate matrix has rank {rank} < p = {p}")


class TooFewAreas(ValidationError):
    def __init__(self, m: int, p: int):
        self.m, self.p = m, p
        super().__init__(f"need m >= p + 2 areas, got m={m}, p={p}")


class NonFinite(ValidationError):
    def __init__(self, index: int, field_name: str):
        self.index, self.field = index, field_name
        super().__init__(f"non-finite value in {field_name} at area {index}")


class OutOfRange(SAEError, ValueError):
    pass


class NotConverged(SAEError, RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AreaDataset:
    """Area-level data: direct estimates ``y``, known variances ``D`` and covariates ``X``.

    Arrays are copied to read-only float64 buffers on construction.
    """

    y: np.ndarray
    D: np.ndarray
    X: np.ndarray
    area_id: tuple = field(default=())

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        D = np.array(self.D, dtype=float).reshape(-1)
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        for arr in (y, D, X):
            arr.setflags(write=False)
        ids = tuple(self.area_id) if len(self.area_id) else tuple(str(i + 1) for i in range(len(y)))
        if not (len(y) == len(D) == X.shape[0] == len(ids)):
            raise ValidationError(
                f"length mismatch: y={len(y)}, D={len(D)}, X rows={X.shape[0]}, ids={len(ids)}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "area_id", ids)

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def drop(self, index: int) -> "AreaDataset":
        keep = np.arange(self.m) != index
        ids = tuple(a for k, a in zip(keep, self.area_id) if k)
        return AreaDataset(self.y[keep], self.D[keep], self.X[keep], ids)

    def with_y(self, index: int, value: float) -> "AreaDataset":
        y = self.y.copy()
        y[index] = value
        return AreaDataset(y, self.D, self.X, self.area_id)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Regression coefficients ``beta`` and random-effect variance ``A``."""

    beta: np.ndarray
    A: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "A", float(self.A))
        if not (np.all(np.isfinite(beta)) and math.isfinite(self.A)):
            raise ValidationError("model parameters must be finite")
        if self.A < A_MIN:
            raise ValidationError(f"A={self.A!r} is below A_MIN={A_MIN}")

    def as_vector(self) -> np.ndarray:
        return np.append(self.beta, self.A)


@dataclass(frozen=True, eq=False)
class GammaFit:
    gamma: float
    params: ModelParams
    converged: bool
    iterations: int
    final_grad_norm: float
    objective_value: float
    a_floored: bool = False


@dataclass(frozen=True)
class AreaInference:
    theta_hat: float
    s2: float
    lower: float
    upper: float
    method: str
    gamma: float = 0.0
    s2_floored: bool = False


def validate_dataset(data: AreaDataset) -> AreaDataset:
    """Return ``data`` unchanged if it is a well-posed Fay-Herriot dataset, else raise."""
    m, p = data.m, data.p
    for i in range(m):
        if not math.isfinite(data.D[i]):
            raise NonFinite(i, "D")
        if data.D[i] <= 0:
            raise NonPositiveVariance(i)
    for i in range(m):
        if not math.isfinite(data.y[i]):
            raise NonFinite(i, "y")
        if not np.all(np.isfinite(data.X[i])):
            raise NonFinite(i, "X")
    if m < p + 2:
        raise TooFewAreas(m, p)
    sv = np.linalg.svd(data.X, compute_uv=False)
    rank = int(np.sum(sv > RANK_RTOL * sv[0])) if sv[0] > 0 else 0
    if rank < p:
        raise RankDeficient(rank, p)
    return data


def normal_pdf(y: float, mu: float, var: float) -> float:
    if not var > 0:
        raise NonPositiveVariance()
    r = y - mu
    return math.exp(-0.5 * r * r / var) / math.sqrt(2.0 * math.pi * var)


def normal_logpdf(y, mu, var):
    """Vectorised log-density; no argument checking."""
    r = np.asarray(y) - mu
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * r * r / var


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / _SQRT2)


# Acklam's rational approximation, refined below by one Newton step.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_quantile(prob: float) -> float:
    """Standard normal quantile ``z`` with ``Phi(z) = prob``."""
    if not (0.0 < prob < 1.0):
        raise OutOfRange(f"probability must lie in (0, 1), got {prob!r}")
    if prob > 0.5:
        # 1 - prob is exact here, and the lower tail keeps full relative precision
        return -normal_quantile(1.0 - prob)
    if prob < _P_LOW:
        q = math.sqrt(-2.0 * math.log(prob))
        z = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif prob < 0.5:
        q = prob - 0.5
        r = q * q
        z = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        return 0.0
    # Halley-corrected Newton polish against the erfc-based CDF.
    e = normal_cdf(z) - prob
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * z * z)
    return z - u / (1.0 + 0.5 * z * u)


def upper_quantile(alpha: float) -> float:
    """``z_{alpha/2}``: the upper 100(alpha/2)% point."""
    if not (0.0 < alpha < 1.0):
        raise OutOfRange(f"alpha must lie in (0, 1), got {alpha!r}")
    return -normal_quantile(0.5 * alpha)


def as_dataset(y: Sequence[float], D: Sequence[float], X=None, area_id=()) -> AreaDataset:
    """Convenience constructor; ``X=None`` means intercept only."""
    y = np.asarray(y, dtype=float)
    if X is None:
        X = np.ones((len(y), 1))
    return validate_dataset(AreaDataset(y, np.asarray(D, dtype=float), X, tuple(area_id)))

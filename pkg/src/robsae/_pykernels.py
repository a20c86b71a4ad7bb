"""Pure-numpy kernels; same algorithms and signatures as the compiled ``_ckernels``.

Every function takes plain float64 arrays: ``y`` (m,), ``X`` (m, p), ``D`` (m,),
``beta`` (p,).  Objective values returned by ``gamma_obj_grad`` and ``fit_gamma``
are shifted by ``-m/gamma`` (sum of ``expm1(log w_i) / gamma``) so that small
gamma does not drown the line search in cancellation.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
ARMIJO_C = 1e-4
ASCENT_SLACK = 1e-12
MAX_TAU_STEP = 5.0
MAX_HALVINGS = 60


def log_weights(y, X, D, beta, A, gamma):
    s = A + D
    r = y - X @ beta
    lw = -gamma / (2.0 * (1.0 + gamma)) * (LOG_2PI + np.log(s)) - 0.5 * gamma * r * r / s
    return lw, r, s


def gamma_obj_grad(y, X, D, beta, A, gamma):
    lw, r, s = log_weights(y, X, D, beta, A, gamma)
    w = np.exp(lw)
    value = float(np.sum(np.expm1(lw))) / gamma
    grad = np.empty(X.shape[1] + 1)
    grad[:-1] = X.T @ (w * r / s)
    grad[-1] = 0.5 * float(np.sum(w / (s * s) * (r * r - s / (1.0 + gamma))))
    return value, grad


def ml_obj_grad(y, X, D, beta, A):
    s = A + D
    r = y - X @ beta
    value = -0.5 * float(np.sum(LOG_2PI + np.log(s))) - 0.5 * float(np.sum(r * r / s))
    grad = np.empty(X.shape[1] + 1)
    grad[:-1] = X.T @ (r / s)
    grad[-1] = 0.5 * float(np.sum(r * r / (s * s) - 1.0 / s))
    return value, grad


def gls_beta(y, X, D, A):
    s = A + D
    Xw = X / s[:, None]
    return np.linalg.solve(X.T @ Xw, Xw.T @ y)


def robust_moments(y, X, D, beta, A, gamma):
    """Shrinkage point estimates and raw posterior variances (before flooring)."""
    s = A + D
    r = y - X @ beta
    if gamma == 0.0:
        w = np.ones_like(s)
    else:
        w = np.exp(-gamma / (2.0 * (1.0 + gamma)) * (LOG_2PI + np.log(s)) - 0.5 * gamma * r * r / s)
    theta = y - w * D / s * r
    if gamma == 0.0:
        s2 = A * D / s
    else:
        s2 = D + w * D * D / (s * s) * (gamma * r * r - s)
    return theta, s2


def _accept(f_new, f_old, slope, t, gn_new, gn_old):
    # Armijo sufficient ascent, or a tie at rounding level that still shrinks the gradient
    if not math.isfinite(f_new):
        return False
    if f_new >= f_old + ARMIJO_C * t * slope:
        return True
    return f_new >= f_old - ASCENT_SLACK * (1.0 + abs(f_old)) and gn_new < gn_old


def fit_ml(y, X, D, grad_tol, max_iter, shrink, a_min, trace=None):
    """Alternating GLS / Newton-on-log(A - a_min) ascent of the marginal likelihood.

    Returns ``(beta, A, converged, iterations, grad_norm, value, floored)``.
    """
    m = y.shape[0]
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    r = y - X @ beta
    A = max(float(np.mean(r * r) - np.mean(D)), 0.1 * float(np.mean(D)))
    tau = math.log(A)
    A = a_min + math.exp(tau)
    converged = floored = False
    it = 0
    gnorm = math.inf
    while True:
        beta = gls_beta(y, X, D, A)
        f, g = ml_obj_grad(y, X, D, beta, A)
        gnorm = float(np.max(np.abs(g))) / m
        if trace is not None:
            trace.append(f)
        if gnorm <= grad_tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        e = math.exp(tau)
        s = A + D
        r = y - X @ beta
        g_tau = g[-1] * e
        h_aa = float(np.sum(0.5 / (s * s) - r * r / (s * s * s)))
        h_tau = h_aa * e * e + g[-1] * e
        if h_tau < 0.0:
            step = -g_tau / h_tau
        else:
            step = g_tau / (0.5 * float(np.sum(e * e / (s * s))))
        step = max(-MAX_TAU_STEP, min(MAX_TAU_STEP, step))
        t = 1.0
        gn_old = abs(g_tau)
        accepted = False
        for _ in range(MAX_HALVINGS):
            tau_new = tau + t * step
            A_new = a_min + math.exp(tau_new)
            f_new, g_new = ml_obj_grad(y, X, D, beta, A_new)
            if _accept(f_new, f, g_tau * step, t, abs(g_new[-1] * math.exp(tau_new)), gn_old):
                accepted = True
                break
            t *= shrink
        if not accepted:
            break
        tau, A = tau_new, A_new
        if math.exp(tau) <= a_min and g_new[-1] < 0.0:
            # boundary maximum: clamp and solve the beta-equation exactly there
            A = a_min
            beta = gls_beta(y, X, D, A)
            f, g = ml_obj_grad(y, X, D, beta, A)
            gnorm = float(np.max(np.abs(g[:-1]))) / m
            converged = floored = True
            break
    return beta, A, converged, it, gnorm, f, floored


def _fisher_diag(y, X, D, beta, tau, gamma, a_min):
    e = math.exp(tau)
    lw, r, s = log_weights(y, X, D, beta, a_min + e, gamma)
    w = np.exp(lw)
    diag = np.empty(X.shape[1] + 1)
    diag[:-1] = (w / s) @ (X * X)
    diag[-1] = 0.5 * float(np.sum(w * e * e / (s * s)))
    return np.maximum(diag, 1e-12 * y.shape[0])


def fit_gamma(y, X, D, beta0, A0, gamma, grad_tol, max_iter, shrink, a_min, trace=None):
    """BFGS ascent of the gamma-divergence objective in ``(beta, log(A - a_min))``.

    Returns ``(beta, A, converged, iterations, grad_norm, shifted_value)``.
    """
    m, p = X.shape
    z = np.empty(p + 1)
    z[:p] = beta0
    z[p] = math.log(max(A0 - a_min, a_min))

    def evaluate(z):
        e = math.exp(z[p])
        f, g = gamma_obj_grad(y, X, D, z[:p], a_min + e, gamma)
        g[p] *= e
        return f, g

    f, g = evaluate(z)
    H0 = np.diag(1.0 / _fisher_diag(y, X, D, z[:p], z[p], gamma, a_min))
    H = H0.copy()
    fresh = True
    converged = False
    it = 0
    gnorm = float(np.max(np.abs(g))) / m
    while True:
        if trace is not None:
            trace.append(f)
        if gnorm <= grad_tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        d = H @ g
        slope = float(g @ d)
        if not slope > 0.0:
            H = H0.copy()
            fresh = True
            d = H @ g
            slope = float(g @ d)
        t = 1.0
        if abs(d[p]) > MAX_TAU_STEP:
            t = MAX_TAU_STEP / abs(d[p])
        accepted = False
        for _ in range(MAX_HALVINGS):
            z_new = z + t * d
            f_new, g_new = evaluate(z_new)
            gn_new = float(np.max(np.abs(g_new))) / m
            if _accept(f_new, f, slope, t, gn_new, gnorm):
                accepted = True
                break
            t *= shrink
        if not accepted:
            if fresh:
                break
            H0 = np.diag(1.0 / _fisher_diag(y, X, D, z[:p], z[p], gamma, a_min))
            H = H0.copy()
            fresh = True
            continue
        sv = z_new - z
        yv = g - g_new  # gradient change of the minimised function -f
        sy = float(sv @ yv)
        if sy > 1e-16 * float(np.sqrt((sv @ sv) * (yv @ yv))) and sy > 0.0:
            rho = 1.0 / sy
            Hy = H @ yv
            H = (H - rho * (np.outer(sv, Hy) + np.outer(Hy, sv))
                 + (rho * rho * float(yv @ Hy) + rho) * np.outer(sv, sv))
            fresh = False
        z, f, g, gnorm = z_new, f_new, g_new, gn_new
    return z[:p].copy(), a_min + math.exp(z[p]), converged, it, gnorm, f

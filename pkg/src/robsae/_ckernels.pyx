# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels mirroring ``robsae._pykernels``.

The solvers run without the GIL so Monte Carlo replications can be spread
over threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, expm1, fabs, sqrt, INFINITY, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double LOG_2PI = log(2.0 * 3.141592653589793)
cdef double ARMIJO_C = 1e-4
cdef double ASCENT_SLACK = 1e-12
cdef double MAX_TAU_STEP = 5.0
cdef int MAX_HALVINGS = 60


cdef double _gobj(const double[::1] y, const double[:, ::1] X, const double[::1] D,
                  const double* beta, double A, double gamma, double* grad) noexcept nogil:
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1], i, j
    cdef double s, r, lw, w, val = 0.0, ga = 0.0, c = gamma / (2.0 * (1.0 + gamma))
    cdef double inv1g = 1.0 / (1.0 + gamma)
    for j in range(p):
        grad[j] = 0.0
    for i in range(m):
        s = A + D[i]
        r = y[i]
        for j in range(p):
            r -= X[i, j] * beta[j]
        lw = -c * (LOG_2PI + log(s)) - 0.5 * gamma * r * r / s
        w = exp(lw)
        val += expm1(lw)
        for j in range(p):
            grad[j] += X[i, j] * (w * r / s)
        ga += w / (s * s) * (r * r - s * inv1g)
    grad[p] = 0.5 * ga
    return val / gamma


cdef double _mlobj(const double[::1] y, const double[:, ::1] X, const double[::1] D,
                   const double* beta, double A, double* grad) noexcept nogil:
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1], i, j
    cdef double s, r, val1 = 0.0, val2 = 0.0, ga = 0.0
    for j in range(p):
        grad[j] = 0.0
    for i in range(m):
        s = A + D[i]
        r = y[i]
        for j in range(p):
            r -= X[i, j] * beta[j]
        val1 += LOG_2PI + log(s)
        val2 += r * r / s
        for j in range(p):
            grad[j] += X[i, j] * (r / s)
        ga += r * r / (s * s) - 1.0 / s
    grad[p] = 0.5 * ga
    return -0.5 * val1 - 0.5 * val2


cdef int _chol_solve(double* M, double* b, Py_ssize_t p) noexcept nogil:
    """In-place Cholesky of the p x p SPD matrix M, then solve M x = b into b."""
    cdef Py_ssize_t i, j, k
    cdef double acc
    for j in range(p):
        acc = M[j * p + j]
        for k in range(j):
            acc -= M[j * p + k] * M[j * p + k]
        if acc <= 0.0:
            return -1
        M[j * p + j] = sqrt(acc)
        for i in range(j + 1, p):
            acc = M[i * p + j]
            for k in range(j):
                acc -= M[i * p + k] * M[j * p + k]
            M[i * p + j] = acc / M[j * p + j]
    for i in range(p):
        acc = b[i]
        for k in range(i):
            acc -= M[i * p + k] * b[k]
        b[i] = acc / M[i * p + i]
    for i in range(p - 1, -1, -1):
        acc = b[i]
        for k in range(i + 1, p):
            acc -= M[k * p + i] * b[k]
        b[i] = acc / M[i * p + i]
    return 0


cdef int _gls(const double[::1] y, const double[:, ::1] X, const double[::1] D,
              double A, int unweighted, double* beta, double* M) noexcept nogil:
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1], i, j, k
    cdef double v
    for j in range(p * p):
        M[j] = 0.0
    for j in range(p):
        beta[j] = 0.0
    for i in range(m):
        v = 1.0 if unweighted else 1.0 / (A + D[i])
        for j in range(p):
            beta[j] += X[i, j] * y[i] * v
            for k in range(p):
                M[j * p + k] += X[i, j] * X[i, k] * v
    return _chol_solve(M, beta, p)


cdef inline double _maxabs(const double* g, Py_ssize_t n) noexcept nogil:
    cdef double out = 0.0
    cdef Py_ssize_t j
    for j in range(n):
        if fabs(g[j]) > out:
            out = fabs(g[j])
    return out


cdef inline bint _accept(double f_new, double f_old, double slope, double t,
                         double gn_new, double gn_old) noexcept nogil:
    if not isfinite(f_new):
        return False
    if f_new >= f_old + ARMIJO_C * t * slope:
        return True
    return f_new >= f_old - ASCENT_SLACK * (1.0 + fabs(f_old)) and gn_new < gn_old


cdef int _fit_ml(const double[::1] y, const double[:, ::1] X, const double[::1] D,
                 double grad_tol, int max_iter, double shrink, double a_min,
                 double* beta, double* out) noexcept nogil:
    # out = [A, converged, iterations, grad_norm, value, floored]
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1], i, j, h
    cdef double* M = <double*> malloc(p * p * sizeof(double))
    cdef double* g = <double*> malloc((p + 1) * sizeof(double))
    cdef double* g_new = <double*> malloc((p + 1) * sizeof(double))
    cdef double A, tau, tau_new, A_new, f, f_new, gnorm, r, s, e, mr = 0.0, md = 0.0
    cdef double g_tau, h_aa, h_tau, fish, step, t
    cdef int it = 0, converged = 0, floored = 0, accepted
    _gls(y, X, D, 0.0, 1, beta, M)
    for i in range(m):
        r = y[i]
        for j in range(p):
            r -= X[i, j] * beta[j]
        mr += r * r
        md += D[i]
    mr /= m
    md /= m
    A = mr - md
    if A < 0.1 * md:
        A = 0.1 * md
    tau = log(A)
    A = a_min + exp(tau)
    gnorm = INFINITY
    f = 0.0
    while True:
        _gls(y, X, D, A, 0, beta, M)
        f = _mlobj(y, X, D, beta, A, g)
        gnorm = _maxabs(g, p + 1) / m
        if gnorm <= grad_tol:
            converged = 1
            break
        if it >= max_iter:
            break
        it += 1
        e = exp(tau)
        h_aa = 0.0
        fish = 0.0
        for i in range(m):
            s = A + D[i]
            r = y[i]
            for j in range(p):
                r -= X[i, j] * beta[j]
            h_aa += 0.5 / (s * s) - r * r / (s * s * s)
            fish += e * e / (s * s)
        g_tau = g[p] * e
        h_tau = h_aa * e * e + g[p] * e
        if h_tau < 0.0:
            step = -g_tau / h_tau
        else:
            step = g_tau / (0.5 * fish)
        if step > MAX_TAU_STEP:
            step = MAX_TAU_STEP
        elif step < -MAX_TAU_STEP:
            step = -MAX_TAU_STEP
        t = 1.0
        accepted = 0
        for h in range(MAX_HALVINGS):
            tau_new = tau + t * step
            A_new = a_min + exp(tau_new)
            f_new = _mlobj(y, X, D, beta, A_new, g_new)
            if _accept(f_new, f, g_tau * step, t, fabs(g_new[p] * exp(tau_new)), fabs(g_tau)):
                accepted = 1
                break
            t *= shrink
        if not accepted:
            break
        tau = tau_new
        A = A_new
        if exp(tau) <= a_min and g_new[p] < 0.0:
            A = a_min
            _gls(y, X, D, A, 0, beta, M)
            f = _mlobj(y, X, D, beta, A, g)
            gnorm = _maxabs(g, p) / m
            converged = 1
            floored = 1
            break
    out[0] = A
    out[1] = converged
    out[2] = it
    out[3] = gnorm
    out[4] = f
    out[5] = floored
    free(M)
    free(g)
    free(g_new)
    return 0


cdef void _fisher_inv_diag(const double[::1] y, const double[:, ::1] X, const double[::1] D,
                           const double* z, double gamma, double a_min, double* H) noexcept nogil:
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1], n = p + 1, i, j
    cdef double e = exp(z[p]), A = a_min + exp(z[p]), s, r, w, c = gamma / (2.0 * (1.0 + gamma))
    cdef double floor_ = 1e-12 * m
    for j in range(n * n):
        H[j] = 0.0
    for i in range(m):
        s = A + D[i]
        r = y[i]
        for j in range(p):
            r -= X[i, j] * z[j]
        w = exp(-c * (LOG_2PI + log(s)) - 0.5 * gamma * r * r / s)
        for j in range(p):
            H[j * n + j] += w / s * X[i, j] * X[i, j]
        H[p * n + p] += 0.5 * w * e * e / (s * s)
    for j in range(n):
        if H[j * n + j] < floor_:
            H[j * n + j] = floor_
        H[j * n + j] = 1.0 / H[j * n + j]


cdef double _eval_z(const double[::1] y, const double[:, ::1] X, const double[::1] D,
                    const double* z, double gamma, double a_min, double* g) noexcept nogil:
    cdef Py_ssize_t p = X.shape[1]
    cdef double e = exp(z[p])
    cdef double f = _gobj(y, X, D, z, a_min + e, gamma, g)
    g[p] *= e
    return f


cdef int _fit_gamma(const double[::1] y, const double[:, ::1] X, const double[::1] D,
                    double gamma, double grad_tol, int max_iter, double shrink, double a_min,
                    double* z, double* out) noexcept nogil:
    # z holds (beta, tau) on entry and exit; out = [converged, iterations, grad_norm, value]
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1], n = p + 1, j, k, h
    cdef double* H = <double*> malloc(n * n * sizeof(double))
    cdef double* g = <double*> malloc(n * sizeof(double))
    cdef double* g_new = <double*> malloc(n * sizeof(double))
    cdef double* d = <double*> malloc(n * sizeof(double))
    cdef double* z_new = <double*> malloc(n * sizeof(double))
    cdef double* sv = <double*> malloc(n * sizeof(double))
    cdef double* yv = <double*> malloc(n * sizeof(double))
    cdef double* Hy = <double*> malloc(n * sizeof(double))
    cdef double f, f_new, gnorm, gn_new = 0.0, slope, t, sy, ss, yy, rho, yHy
    cdef int it = 0, converged = 0, fresh = 1, accepted
    f = _eval_z(y, X, D, z, gamma, a_min, g)
    _fisher_inv_diag(y, X, D, z, gamma, a_min, H)
    gnorm = _maxabs(g, n) / m
    while True:
        if gnorm <= grad_tol:
            converged = 1
            break
        if it >= max_iter:
            break
        it += 1
        slope = 0.0
        for j in range(n):
            d[j] = 0.0
            for k in range(n):
                d[j] += H[j * n + k] * g[k]
            slope += g[j] * d[j]
        if not slope > 0.0:
            _fisher_inv_diag(y, X, D, z, gamma, a_min, H)
            fresh = 1
            slope = 0.0
            for j in range(n):
                d[j] = H[j * n + j] * g[j]
                slope += g[j] * d[j]
        t = 1.0
        if fabs(d[p]) > MAX_TAU_STEP:
            t = MAX_TAU_STEP / fabs(d[p])
        accepted = 0
        for h in range(MAX_HALVINGS):
            for j in range(n):
                z_new[j] = z[j] + t * d[j]
            f_new = _eval_z(y, X, D, z_new, gamma, a_min, g_new)
            gn_new = _maxabs(g_new, n) / m
            if _accept(f_new, f, slope, t, gn_new, gnorm):
                accepted = 1
                break
            t *= shrink
        if not accepted:
            if fresh:
                break
            _fisher_inv_diag(y, X, D, z, gamma, a_min, H)
            fresh = 1
            continue
        sy = 0.0
        ss = 0.0
        yy = 0.0
        for j in range(n):
            sv[j] = z_new[j] - z[j]
            yv[j] = g[j] - g_new[j]
            sy += sv[j] * yv[j]
            ss += sv[j] * sv[j]
            yy += yv[j] * yv[j]
        if sy > 1e-16 * sqrt(ss * yy) and sy > 0.0:
            rho = 1.0 / sy
            yHy = 0.0
            for j in range(n):
                Hy[j] = 0.0
                for k in range(n):
                    Hy[j] += H[j * n + k] * yv[k]
                yHy += yv[j] * Hy[j]
            for j in range(n):
                for k in range(n):
                    H[j * n + k] += (-rho * (sv[j] * Hy[k] + Hy[j] * sv[k])
                                     + (rho * rho * yHy + rho) * sv[j] * sv[k])
            fresh = 0
        for j in range(n):
            z[j] = z_new[j]
            g[j] = g_new[j]
        f = f_new
        gnorm = gn_new
    out[0] = converged
    out[1] = it
    out[2] = gnorm
    out[3] = f
    free(H)
    free(g)
    free(g_new)
    free(d)
    free(z_new)
    free(sv)
    free(yv)
    free(Hy)
    return 0


def _arrays(y, X, D):
    return (np.ascontiguousarray(y, dtype=np.float64),
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(D, dtype=np.float64))


def gamma_obj_grad(y, X, D, beta, double A, double gamma):
    y, X, D = _arrays(y, X, D)
    cdef const double[::1] yv = y, Dv = D
    cdef const double[:, ::1] Xv = X
    cdef cnp.ndarray[double, ndim=1] b = np.ascontiguousarray(beta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] grad = np.empty(X.shape[1] + 1)
    cdef double val = _gobj(yv, Xv, Dv, &b[0], A, gamma, &grad[0])
    return val, grad


def ml_obj_grad(y, X, D, beta, double A):
    y, X, D = _arrays(y, X, D)
    cdef const double[::1] yv = y, Dv = D
    cdef const double[:, ::1] Xv = X
    cdef cnp.ndarray[double, ndim=1] b = np.ascontiguousarray(beta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] grad = np.empty(X.shape[1] + 1)
    cdef double val = _mlobj(yv, Xv, Dv, &b[0], A, &grad[0])
    return val, grad


def gls_beta(y, X, D, double A):
    y, X, D = _arrays(y, X, D)
    cdef const double[::1] yv = y, Dv = D
    cdef const double[:, ::1] Xv = X
    cdef Py_ssize_t p = X.shape[1]
    cdef cnp.ndarray[double, ndim=1] beta = np.empty(p)
    cdef cnp.ndarray[double, ndim=1] M = np.empty(p * p)
    if _gls(yv, Xv, Dv, A, 0, &beta[0], &M[0]) != 0:
        raise np.linalg.LinAlgError("weighted normal equations are not positive definite")
    return beta


def robust_moments(y, X, D, beta, double A, double gamma):
    y, X, D = _arrays(y, X, D)
    cdef const double[::1] yv = y, Dv = D
    cdef const double[:, ::1] Xv = X
    cdef const double[::1] b = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1], i, j
    cdef cnp.ndarray[double, ndim=1] theta = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] s2 = np.empty(m)
    cdef double s, r, w, c = gamma / (2.0 * (1.0 + gamma))
    with nogil:
        for i in range(m):
            s = A + Dv[i]
            r = yv[i]
            for j in range(p):
                r -= Xv[i, j] * b[j]
            if gamma == 0.0:
                w = 1.0
            else:
                w = exp(-c * (LOG_2PI + log(s)) - 0.5 * gamma * r * r / s)
            theta[i] = yv[i] - w * Dv[i] / s * r
            if gamma == 0.0:
                s2[i] = A * Dv[i] / s
            else:
                s2[i] = Dv[i] + w * Dv[i] * Dv[i] / (s * s) * (gamma * r * r - s)
    return theta, s2


def fit_ml(y, X, D, double grad_tol, int max_iter, double shrink, double a_min, trace=None):
    if trace is not None:
        raise NotImplementedError("iteration traces are only recorded by the Python kernels")
    y, X, D = _arrays(y, X, D)
    cdef const double[::1] yv = y, Dv = D
    cdef const double[:, ::1] Xv = X
    cdef cnp.ndarray[double, ndim=1] beta = np.empty(X.shape[1])
    cdef double out[6]
    cdef double* bp = &beta[0]
    with nogil:
        _fit_ml(yv, Xv, Dv, grad_tol, max_iter, shrink, a_min, bp, out)
    return beta, out[0], bool(out[1]), int(out[2]), out[3], out[4], bool(out[5])


def fit_gamma(y, X, D, beta0, double A0, double gamma, double grad_tol, int max_iter,
              double shrink, double a_min, trace=None):
    if trace is not None:
        raise NotImplementedError("iteration traces are only recorded by the Python kernels")
    y, X, D = _arrays(y, X, D)
    cdef const double[::1] yv = y, Dv = D
    cdef const double[:, ::1] Xv = X
    cdef Py_ssize_t p = X.shape[1]
    cdef cnp.ndarray[double, ndim=1] z = np.empty(p + 1)
    z[:p] = beta0
    z[p] = log(max(A0 - a_min, a_min))
    cdef double out[4]
    cdef double* zp = &z[0]
    with nogil:
        _fit_gamma(yv, Xv, Dv, gamma, grad_tol, max_iter, shrink, a_min, zp, out)
    return z[:p].copy(), a_min + exp(z[p]), bool(out[0]), int(out[1]), out[2], out[3]

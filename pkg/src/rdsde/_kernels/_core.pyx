# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled banded kernels plus fused per-path time-stepping drivers.

Mirrors _pyref's storage convention and pivoting exactly (first maximal
pivot wins ties) so the two backends are interchangeable; run_path fuses
the whole time loop for the built-in reaction/diffusion forms and releases
the GIL while stepping.
"""

import numpy as np

cimport numpy as cnp
from libc.float cimport DBL_EPSILON
from libc.math cimport fabs, isfinite, sqrt

cnp.import_array()

from ._pyref import SingularMatrixError

BACKEND_NAME = "compiled"

# scheme / reaction / diffusion codes, kept in sync with _kernels.__init__
cdef enum:
    SCHEME_MARUYAMA = 0
    SCHEME_IMEX = 1
    R_NONE = 0
    R_CUBIC = 1
    R_LAP_POLY = 2
    R_TWO_BLOCK = 3
    R_DIB = 4
    D_CONST = 0
    D_LINEAR = 1
    D_QUADRATIC = 2


cdef void _matvec(const double[:, ::1] bands, Py_ssize_t k, const double[::1] x,
                  double[::1] y, Py_ssize_t n) noexcept nogil:
    # accumulate offset by offset, in the same order as the reference
    # backend, so both produce bitwise-identical results
    cdef Py_ssize_t i, j, o
    cdef double s
    for i in range(n):
        s = 0.0
        for o in range(-k, k + 1):
            j = i - o
            if 0 <= j < n:
                s += bands[k + o, j] * x[j]
        y[i] = s


cdef int _factor_inplace(double[:, ::1] ab, Py_ssize_t k, Py_ssize_t n,
                         cnp.int32_t[::1] piv, double pivot_tol) noexcept nogil:
    """LU with partial pivoting on band storage; returns -(j+1) on a bad pivot."""
    cdef Py_ssize_t kv = 2 * k
    cdef Py_ssize_t j, km, p, r, c, r0, t
    cdef Py_ssize_t ju = -1
    cdef double pv, v, d, f, tmp
    for j in range(n):
        km = k
        if km > n - 1 - j:
            km = n - 1 - j
        p = 0
        pv = fabs(ab[kv, j])
        for r in range(1, km + 1):
            v = fabs(ab[kv + r, j])
            if v > pv:
                pv = v
                p = r
        if not pv > pivot_tol or not isfinite(pv):
            return -(<int> j + 1)
        piv[j] = <cnp.int32_t> (j + p)
        t = j + k + p
        if t > n - 1:
            t = n - 1
        if t > ju:
            ju = t
        if p != 0:
            for c in range(j, ju + 1):
                r0 = kv + j - c
                tmp = ab[r0, c]
                ab[r0, c] = ab[r0 + p, c]
                ab[r0 + p, c] = tmp
        if km > 0:
            d = ab[kv, j]
            for r in range(1, km + 1):
                ab[kv + r, j] /= d
            for c in range(j + 1, ju + 1):
                f = ab[kv + j - c, c]
                if f != 0.0:
                    r0 = kv + 1 + j - c
                    for r in range(km):
                        ab[r0 + r, c] -= f * ab[kv + 1 + r, j]
    return 0


cdef void _solve_inplace(const double[:, ::1] ab, Py_ssize_t k, Py_ssize_t n,
                         const cnp.int32_t[::1] piv, double[::1] y) noexcept nogil:
    cdef Py_ssize_t kv = 2 * k
    cdef Py_ssize_t j, km, r, i, i0, p
    cdef double tmp, xj
    for j in range(n):
        p = piv[j]
        if p != j:
            tmp = y[j]
            y[j] = y[p]
            y[p] = tmp
        km = k
        if km > n - 1 - j:
            km = n - 1 - j
        for r in range(1, km + 1):
            y[j + r] -= ab[kv + r, j] * y[j]
    for j in range(n - 1, -1, -1):
        xj = y[j] / ab[kv, j]
        y[j] = xj
        i0 = j - kv
        if i0 < 0:
            i0 = 0
        for i in range(i0, j):
            y[i] -= ab[kv + i - j, j] * xj


cdef double _band_max_abs(const double[:, ::1] ab) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double m = 0.0, v
    for i in range(ab.shape[0]):
        for j in range(ab.shape[1]):
            v = fabs(ab[i, j])
            if v > m:
                m = v
    return m


def band_matvec(bands, k, x):
    """Multiply a banded matrix by a vector."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] b = np.ascontiguousarray(bands, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] y = np.zeros(xv.shape[0])
    _matvec(b, k, xv, y, xv.shape[0])
    return y


def band_lu_factor(bands, k, pivot_tol=None):
    """Banded LU with partial pivoting; see the reference backend for details."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] b = np.ascontiguousarray(bands, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[1]
    cdef Py_ssize_t kk = k
    cdef cnp.ndarray[double, ndim=2, mode="c"] ab = np.zeros((3 * kk + 1, n))
    ab[kk:, :] = b
    cdef cnp.ndarray[cnp.int32_t, ndim=1, mode="c"] piv = np.zeros(n, dtype=np.int32)
    cdef double tol
    if pivot_tol is None:
        tol = _band_max_abs(b) * n * DBL_EPSILON
    else:
        tol = pivot_tol
    cdef int rc = _factor_inplace(ab, kk, n, piv, tol)
    if rc != 0:
        raise SingularMatrixError(
            f"pivot at column {-rc - 1} under threshold {tol!r}")
    return ab, piv


def band_lu_solve(ab, piv, k, b):
    """Solve with a factorization produced by band_lu_factor."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] abv = np.ascontiguousarray(ab, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1, mode="c"] pv = np.ascontiguousarray(piv, dtype=np.int32)
    cdef cnp.ndarray[double, ndim=1, mode="c"] y = np.array(b, dtype=np.float64, copy=True)
    _solve_inplace(abv, k, y.shape[0], pv, y)
    return y


cdef void _reaction_eval(int code, const double[::1] prm, const double[:, ::1] rb,
                         Py_ssize_t rb_k, const double[::1] x, double[::1] out,
                         double[::1] scratch, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, m
    cdef double u, v
    if code == R_NONE:
        for i in range(n):
            out[i] = 0.0
    elif code == R_CUBIC:
        for i in range(n):
            u = x[i]
            out[i] = prm[0] * u + prm[1] * u * u * u
    elif code == R_LAP_POLY:
        for i in range(n):
            u = x[i]
            scratch[i] = prm[0] + prm[1] * u * u
        _matvec(rb, rb_k, scratch, out, n)
    elif code == R_TWO_BLOCK:
        m = n // 2
        for i in range(m):
            u = x[i]
            out[i] = prm[0] * u + prm[1] * u * u * u
        for i in range(m, n):
            out[i] = prm[2] * x[i]
    else:  # R_DIB
        m = n // 2
        for i in range(m):
            u = x[i]
            v = x[m + i]
            out[i] = prm[0] * (prm[1] * (1.0 - v) * u - prm[2] * u * u * u
                               - prm[3] * (v - prm[4]))
            out[m + i] = prm[0] * (
                prm[5] * (1.0 + prm[8] * u) * (1.0 - v) * (1.0 - prm[7] * (1.0 - v))
                - prm[6] * v * (1.0 + prm[9] * u) * (1.0 + prm[7] * v))


cdef void _diffusion_times_dw(int code, const double[::1] prm, const double[::1] x,
                              const double[::1] dw, double[::1] out,
                              Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    if code == D_CONST:
        for i in range(n):
            out[i] = prm[0] * dw[i]
    elif code == D_LINEAR:
        for i in range(n):
            out[i] = prm[0] * x[i] * dw[i]
    else:  # D_QUADRATIC
        for i in range(n):
            out[i] = prm[0] * x[i] * x[i] * dw[i]


cdef void _jac_diag(int code, const double[::1] prm, const double[::1] x,
                    double[::1] out, Py_ssize_t n) noexcept nogil:
    """Diagonal of the reaction Jacobian for the entrywise reactions."""
    cdef Py_ssize_t i, m
    cdef double u
    if code == R_CUBIC:
        for i in range(n):
            u = x[i]
            out[i] = prm[0] + 3.0 * prm[1] * u * u
    elif code == R_TWO_BLOCK:
        m = n // 2
        for i in range(m):
            u = x[i]
            out[i] = prm[0] + 3.0 * prm[1] * u * u
        for i in range(m, n):
            out[i] = prm[2]
    else:  # R_NONE
        for i in range(n):
            out[i] = 0.0


cdef int _newton_assemble_factor(double[:, ::1] ab, Py_ssize_t big_k,
                                 const double[:, ::1] op_bands, Py_ssize_t op_k,
                                 int reaction_code, const double[::1] prm,
                                 const double[:, ::1] rb, Py_ssize_t rb_k,
                                 const double[::1] xk, double[::1] jd,
                                 double theta_dt, Py_ssize_t n,
                                 cnp.int32_t[::1] piv) noexcept nogil:
    """Build and factor I + theta*dt*(A - R'(x)) in (3K+1, n) band storage."""
    cdef Py_ssize_t i, j, d
    cdef double colf, tol
    for i in range(ab.shape[0]):
        for j in range(n):
            ab[i, j] = 0.0
    for d in range(-op_k, op_k + 1):
        for j in range(n):
            ab[2 * big_k + d, j] = theta_dt * op_bands[op_k + d, j]
    for j in range(n):
        ab[2 * big_k, j] += 1.0
    if reaction_code == R_LAP_POLY:
        for j in range(n):
            colf = theta_dt * 2.0 * prm[1] * xk[j]
            for d in range(-rb_k, rb_k + 1):
                ab[2 * big_k + d, j] -= colf * rb[rb_k + d, j]
    else:
        _jac_diag(reaction_code, prm, xk, jd, n)
        for j in range(n):
            ab[2 * big_k, j] -= theta_dt * jd[j]
    tol = _band_max_abs(ab) * n * DBL_EPSILON
    return _factor_inplace(ab, big_k, n, piv, tol)


def run_path(int scheme_code, double[:, ::1] op_bands, int op_k,
             int reaction_code, double[::1] reaction_params,
             double[:, ::1] rb_bands, int rb_k,
             int diffusion_code, double[::1] diffusion_params,
             double theta, double dt, bint imex_weight_theta,
             double[::1] x0, double[:, ::1] dws,
             double newton_tol, int newton_max_iter,
             double[:, ::1] out_states, cnp.int64_t[::1] out_iters):
    """Advance one trajectory through all increments without Python overhead.

    Fills out_states/out_iters and returns the blow-up step index (the first
    invalid state) or -1 for a clean run.  Matches the pure-Python driver:
    Newton failures and non-finite states end the path as data.
    """
    cdef Py_ssize_t n = x0.shape[0]
    cdef Py_ssize_t n_steps = dws.shape[0]
    cdef Py_ssize_t big_k = op_k
    if reaction_code == R_LAP_POLY and rb_k > big_k:
        big_k = rb_k
    work = np.zeros((7, n))
    cdef double[:, ::1] w = work
    cdef double[:, ::1] newton_ab = np.zeros((3 * big_k + 1, n))
    cdef cnp.int32_t[::1] newton_piv = np.zeros(n, dtype=np.int32)
    cdef double[:, ::1] lin_ab = np.zeros((1, 1))
    cdef cnp.int32_t[::1] lin_piv = np.zeros(1, dtype=np.int32)
    cdef bint use_lin = scheme_code == SCHEME_IMEX and theta > 0.0
    if use_lin:
        shifted = theta * dt * np.asarray(op_bands)
        shifted[op_k, :] += 1.0
        lin_ab_arr, lin_piv_arr = band_lu_factor(shifted, op_k)
        lin_ab = lin_ab_arr
        lin_piv = lin_piv_arr

    cdef double theta_dt = theta * dt
    cdef double w_react = theta * dt if imex_weight_theta else dt
    cdef double one_m = (1.0 - theta) * dt
    cdef Py_ssize_t step, i, it
    cdef int rc
    cdef double norm_rhs, norm_f, s
    cdef bint ok, bad
    cdef Py_ssize_t blow = -1
    # work rows: 0 xcur, 1 rhs, 2 rx, 3 tmp, 4 gdw, 5 fvec/solution, 6 jd/scratch
    with nogil:
        for i in range(n):
            w[0, i] = x0[i]
            out_states[0, i] = x0[i]
        for step in range(n_steps):
            if scheme_code == SCHEME_MARUYAMA:
                _matvec(op_bands, op_k, w[0], w[3], n)
                _reaction_eval(reaction_code, reaction_params, rb_bands, rb_k,
                               w[0], w[2], w[6], n)
                _diffusion_times_dw(diffusion_code, diffusion_params, w[0],
                                    dws[step], w[4], n)
                for i in range(n):
                    w[1, i] = w[0, i] + one_m * (-w[3, i] + w[2, i]) + w[4, i]
                if theta == 0.0:
                    out_iters[step] = 0
                    for i in range(n):
                        w[0, i] = w[1, i]
                else:
                    norm_rhs = 0.0
                    for i in range(n):
                        norm_rhs += w[1, i] * w[1, i]
                    norm_rhs = sqrt(norm_rhs)
                    it = 0
                    ok = False
                    while True:
                        _matvec(op_bands, op_k, w[0], w[3], n)
                        _reaction_eval(reaction_code, reaction_params, rb_bands,
                                       rb_k, w[0], w[2], w[6], n)
                        norm_f = 0.0
                        for i in range(n):
                            w[5, i] = (w[0, i] + theta_dt * w[3, i]
                                       - theta_dt * w[2, i] - w[1, i])
                            norm_f += w[5, i] * w[5, i]
                        norm_f = sqrt(norm_f)
                        if not isfinite(norm_f):
                            break
                        if norm_f <= newton_tol * (1.0 + norm_rhs):
                            ok = True
                            break
                        if it >= newton_max_iter:
                            break
                        rc = _newton_assemble_factor(
                            newton_ab, big_k, op_bands, op_k, reaction_code,
                            reaction_params, rb_bands, rb_k, w[0], w[6],
                            theta_dt, n, newton_piv)
                        if rc != 0:
                            break
                        _solve_inplace(newton_ab, big_k, n, newton_piv, w[5])
                        for i in range(n):
                            w[0, i] -= w[5, i]
                        it += 1
                    if not ok:
                        blow = step + 1
                        break
                    out_iters[step] = it
            else:  # SCHEME_IMEX
                _matvec(op_bands, op_k, w[0], w[3], n)
                _reaction_eval(reaction_code, reaction_params, rb_bands, rb_k,
                               w[0], w[2], w[6], n)
                _diffusion_times_dw(diffusion_code, diffusion_params, w[0],
                                    dws[step], w[4], n)
                for i in range(n):
                    w[1, i] = (w[0, i] - one_m * w[3, i] + w_react * w[2, i]
                               + w[4, i])
                if theta > 0.0:
                    _solve_inplace(lin_ab, op_k, n, lin_piv, w[1])
                out_iters[step] = 0
                for i in range(n):
                    w[0, i] = w[1, i]
            bad = False
            for i in range(n):
                if not isfinite(w[0, i]):
                    bad = True
                    break
            if bad:
                blow = step + 1
                break
            for i in range(n):
                out_states[step + 1, i] = w[0, i]
    return blow

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled planar-arm dynamics kernels.

Mirrors :mod:`hiertraj._fallback` function by function. Arrays are
C-contiguous float64; link parameters are passed as one ``(5, n_links)``
block with rows (lengths, masses, inertias, com_offsets, damping).
"""

from libc.math cimport sin, cos, sqrt, isfinite

import numpy as np


cdef struct Arm:
    int nl
    const double* l
    const double* m
    const double* I
    const double* r
    const double* b
    double g


cdef inline Arm _arm(const double[:, ::1] params, double gravity):
    cdef Arm arm
    arm.nl = <int>params.shape[1]
    arm.l = &params[0, 0]
    arm.m = &params[1, 0]
    arm.I = &params[2, 0]
    arm.r = &params[3, 0]
    arm.b = &params[4, 0]
    arm.g = gravity
    return arm


# ws must hold at least 6 * nl doubles
cdef void _rnea(const Arm* arm, const double* q, const double* qd,
                const double* qdd, double grav, bint damped,
                double* tau, double* ws) noexcept nogil:
    cdef int nl = arm.nl
    cdef double* ex = ws
    cdef double* ey = ws + nl
    cdef double* om = ws + 2 * nl
    cdef double* al = ws + 3 * nl
    cdef double* acx = ws + 4 * nl
    cdef double* acy = ws + 5 * nl
    cdef double phi = 0.0, w = 0.0, a = 0.0
    cdef double aox = 0.0, aoy = grav
    cdef double tx, ty, c, s
    cdef double fx, fy, fnx = 0.0, fny = 0.0, nn = 0.0, ni
    cdef int i
    for i in range(nl):
        phi += q[i]
        w += qd[i]
        a += qdd[i]
        c = cos(phi)
        s = sin(phi)
        ex[i] = c
        ey[i] = s
        om[i] = w
        al[i] = a
        tx = -a * s - w * w * c
        ty = a * c - w * w * s
        acx[i] = aox + arm.r[i] * tx
        acy[i] = aoy + arm.r[i] * ty
        aox += arm.l[i] * tx
        aoy += arm.l[i] * ty
    for i in range(nl - 1, -1, -1):
        fx = fnx + arm.m[i] * acx[i]
        fy = fny + arm.m[i] * acy[i]
        ni = (nn + arm.I[i] * al[i]
              + arm.r[i] * (ex[i] * fy - ey[i] * fx)
              + (arm.l[i] - arm.r[i]) * (ex[i] * fny - ey[i] * fnx))
        if damped:
            tau[i] = ni + arm.b[i] * qd[i]
        else:
            tau[i] = ni
        fnx = fx
        fny = fy
        nn = ni


# ws must hold at least nl*nl + 10*nl doubles
cdef int _accel(const Arm* arm, const double* q, const double* qd,
                const double* u, double* qdd, double* ws) noexcept nogil:
    cdef int nl = arm.nl
    cdef double* M = ws
    cdef double* h = ws + nl * nl
    cdef double* e = h + nl
    cdef double* col = e + nl
    cdef double* z = col + nl
    cdef double* scratch = z + nl
    cdef int i, j, k
    cdef double acc
    for j in range(nl):
        e[j] = 0.0
        z[j] = 0.0
    # column j of M is the gravity-free, velocity-free torque for qdd = e_j
    for j in range(nl):
        e[j] = 1.0
        _rnea(arm, q, z, e, 0.0, False, col, scratch)
        e[j] = 0.0
        for i in range(nl):
            M[i * nl + j] = col[i]
    _rnea(arm, q, qd, z, arm.g, True, h, scratch)
    for i in range(nl):
        qdd[i] = u[i] - h[i]
    # in-place Cholesky, lower triangle
    for j in range(nl):
        acc = M[j * nl + j]
        for k in range(j):
            acc -= M[j * nl + k] * M[j * nl + k]
        if acc <= 0.0:
            return -1
        M[j * nl + j] = sqrt(acc)
        for i in range(j + 1, nl):
            acc = M[i * nl + j]
            for k in range(j):
                acc -= M[i * nl + k] * M[j * nl + k]
            M[i * nl + j] = acc / M[j * nl + j]
    for i in range(nl):
        acc = qdd[i]
        for k in range(i):
            acc -= M[i * nl + k] * qdd[k]
        qdd[i] = acc / M[i * nl + i]
    for i in range(nl - 1, -1, -1):
        acc = qdd[i]
        for k in range(i + 1, nl):
            acc -= M[k * nl + i] * qdd[k]
        qdd[i] = acc / M[i * nl + i]
    return 0


cdef inline int _ws_size(int nl) noexcept nogil:
    return nl * nl + 16 * nl


# Euler: x+ = x + dt * [qd; qdd]
cdef int _euler(const Arm* arm, const double* x, const double* u, double dt,
                double* out, double* ws) noexcept nogil:
    cdef int nl = arm.nl
    cdef double* qdd = ws
    cdef int i
    if _accel(arm, x, x + nl, u, qdd, ws + nl) != 0:
        return -1
    for i in range(nl):
        out[i] = x[i] + dt * x[nl + i]
        out[nl + i] = x[nl + i] + dt * qdd[i]
    return 0


cdef int _rk4(const Arm* arm, const double* x, const double* u, double dt,
              double* out, double* ws) noexcept nogil:
    cdef int nl = arm.nl
    cdef int n = 2 * nl
    cdef double* k = ws                  # 4 stages of n
    cdef double* xs = ws + 4 * n
    cdef double* rest = ws + 5 * n
    cdef double coef[4]
    cdef int s, i
    coef[0] = 0.0
    coef[1] = 0.5 * dt
    coef[2] = 0.5 * dt
    coef[3] = dt
    for s in range(4):
        for i in range(n):
            if s == 0:
                xs[i] = x[i]
            else:
                xs[i] = x[i] + coef[s] * k[(s - 1) * n + i]
        for i in range(nl):
            k[s * n + i] = xs[nl + i]
        if _accel(arm, xs, xs + nl, u, k + s * n + nl, rest) != 0:
            return -1
    for i in range(n):
        out[i] = x[i] + dt / 6.0 * (k[i] + 2.0 * k[n + i] + 2.0 * k[2 * n + i] + k[3 * n + i])
    return 0


def inverse_dynamics(const double[:, ::1] params, double gravity,
                     const double[::1] q, const double[::1] qd,
                     const double[::1] qdd):
    """Joint torques for the given motion, including damping."""
    cdef Arm arm = _arm(params, gravity)
    cdef double[::1] tau = np.empty(arm.nl)
    cdef double[::1] ws = np.empty(6 * arm.nl)
    _rnea(&arm, &q[0], &qd[0], &qdd[0], gravity, True, &tau[0], &ws[0])
    return np.asarray(tau)


def mass_matrix(const double[:, ::1] params, const double[::1] q):
    cdef Arm arm = _arm(params, 0.0)
    cdef int nl = arm.nl
    cdef double[:, ::1] M = np.empty((nl, nl))
    cdef double[::1] zero = np.zeros(nl)
    cdef double[::1] e = np.zeros(nl)
    cdef double[::1] col = np.empty(nl)
    cdef double[::1] ws = np.empty(6 * nl)
    cdef int i, j
    for j in range(nl):
        e[j] = 1.0
        _rnea(&arm, &q[0], &zero[0], &e[0], 0.0, False, &col[0], &ws[0])
        e[j] = 0.0
        for i in range(nl):
            M[i, j] = col[i]
    return np.asarray(M)


def forward_accel(const double[:, ::1] params, double gravity,
                  const double[::1] q, const double[::1] qd,
                  const double[::1] u):
    cdef Arm arm = _arm(params, gravity)
    cdef double[::1] qdd = np.empty(arm.nl)
    cdef double[::1] ws = np.empty(_ws_size(arm.nl))
    if _accel(&arm, &q[0], &qd[0], &u[0], &qdd[0], &ws[0]) != 0:
        raise ArithmeticError("mass matrix is not positive definite")
    return np.asarray(qdd)


def step(const double[:, ::1] params, double gravity, const double[::1] x,
         const double[::1] u, double dt, int method=0):
    """One integration step; method 0 is explicit Euler, 1 is RK4."""
    cdef Arm arm = _arm(params, gravity)
    cdef int n = 2 * arm.nl
    cdef double[::1] out = np.empty(n)
    cdef double[::1] ws = np.empty(_ws_size(arm.nl) + 6 * n)
    cdef int rc
    if method == 0:
        rc = _euler(&arm, &x[0], &u[0], dt, &out[0], &ws[0])
    else:
        rc = _rk4(&arm, &x[0], &u[0], dt, &out[0], &ws[0])
    if rc != 0:
        raise ArithmeticError("mass matrix is not positive definite")
    return np.asarray(out)


def rollout(const double[:, ::1] params, double gravity,
            const double[::1] x_s, const double[:, ::1] U, double dt):
    """Euler rollout. Returns (X, bad) with bad = -1 or the first
    0-based step index whose output is non-finite."""
    cdef Arm arm = _arm(params, gravity)
    cdef int nl = arm.nl
    cdef int n = 2 * nl
    cdef Py_ssize_t N = U.shape[0]
    cdef double[:, ::1] X = np.empty((N, n))
    cdef double[::1] ws = np.empty(_ws_size(nl))
    cdef const double* prev = &x_s[0]
    cdef Py_ssize_t t
    cdef int i
    cdef int bad = -1
    with nogil:
        for t in range(N):
            if _euler(&arm, prev, &U[t, 0], dt, &X[t, 0], &ws[0]) != 0:
                bad = <int>t
                break
            for i in range(n):
                if not isfinite(X[t, i]):
                    bad = <int>t
                    break
            if bad >= 0:
                break
            prev = &X[t, 0]
    return np.asarray(X), bad


def linearize(const double[:, ::1] params, double gravity,
              const double[:, ::1] xs, const double[:, ::1] U, double dt,
              double h):
    """Central-difference Jacobians of the Euler step at every (x_t, u_t).

    xs holds x_0..x_{N-1} row-wise. Returns A (N, n, n) and B (N, n, m).
    """
    cdef Arm arm = _arm(params, gravity)
    cdef int nl = arm.nl
    cdef int n = 2 * nl
    cdef Py_ssize_t N = U.shape[0]
    cdef double[:, :, ::1] A = np.empty((N, n, n))
    cdef double[:, :, ::1] B = np.empty((N, n, nl))
    cdef double[::1] ws = np.empty(_ws_size(nl))
    cdef double[::1] xp = np.empty(n)
    cdef double[::1] up = np.empty(nl)
    cdef double[::1] fp = np.empty(n)
    cdef double[::1] fm = np.empty(n)
    cdef Py_ssize_t t
    cdef int i, j, rc = 0
    cdef double inv2h = 1.0 / (2.0 * h)
    with nogil:
        for t in range(N):
            for i in range(n):
                xp[i] = xs[t, i]
            for j in range(nl):
                up[j] = U[t, j]
            for j in range(n):
                xp[j] = xs[t, j] + h
                rc |= _euler(&arm, &xp[0], &up[0], dt, &fp[0], &ws[0])
                xp[j] = xs[t, j] - h
                rc |= _euler(&arm, &xp[0], &up[0], dt, &fm[0], &ws[0])
                xp[j] = xs[t, j]
                for i in range(n):
                    A[t, i, j] = (fp[i] - fm[i]) * inv2h
            for j in range(nl):
                up[j] = U[t, j] + h
                rc |= _euler(&arm, &xp[0], &up[0], dt, &fp[0], &ws[0])
                up[j] = U[t, j] - h
                rc |= _euler(&arm, &xp[0], &up[0], dt, &fm[0], &ws[0])
                up[j] = U[t, j]
                for i in range(n):
                    B[t, i, j] = (fp[i] - fm[i]) * inv2h
    if rc != 0:
        raise ArithmeticError("mass matrix is not positive definite")
    return np.asarray(A), np.asarray(B)

"""Pure-Python planar-arm dynamics, used when the compiled kernel is absent.

Same call signatures and arithmetic order as ``_kernel.pyx``.
"""

import math

import numpy as np


def _rnea(params, q, qd, qdd, grav, damped):
    lengths, masses, inertias, com, damping = params
    nl = len(q)
    ex = np.empty(nl)
    ey = np.empty(nl)
    al = np.empty(nl)
    acx = np.empty(nl)
    acy = np.empty(nl)
    phi = w = a = 0.0
    aox, aoy = 0.0, grav
    for i in range(nl):
        phi += q[i]
        w += qd[i]
        a += qdd[i]
        c = math.cos(phi)
        s = math.sin(phi)
        ex[i] = c
        ey[i] = s
        al[i] = a
        tx = -a * s - w * w * c
        ty = a * c - w * w * s
        acx[i] = aox + com[i] * tx
        acy[i] = aoy + com[i] * ty
        aox += lengths[i] * tx
        aoy += lengths[i] * ty
    tau = np.empty(nl)
    fnx = fny = nn = 0.0
    for i in range(nl - 1, -1, -1):
        fx = fnx + masses[i] * acx[i]
        fy = fny + masses[i] * acy[i]
        ni = (nn + inertias[i] * al[i]
              + com[i] * (ex[i] * fy - ey[i] * fx)
              + (lengths[i] - com[i]) * (ex[i] * fny - ey[i] * fnx))
        tau[i] = ni + damping[i] * qd[i] if damped else ni
        fnx, fny, nn = fx, fy, ni
    return tau


def inverse_dynamics(params, gravity, q, qd, qdd):
    return _rnea(params, q, qd, qdd, gravity, True)


def mass_matrix(params, q):
    nl = len(q)
    zero = np.zeros(nl)
    M = np.empty((nl, nl))
    for j in range(nl):
        e = np.zeros(nl)
        e[j] = 1.0
        M[:, j] = _rnea(params, q, zero, e, 0.0, False)
    return M


def forward_accel(params, gravity, q, qd, u):
    nl = len(q)
    M = mass_matrix(params, q)
    h = _rnea(params, q, qd, np.zeros(nl), gravity, True)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("mass matrix is not positive definite") from exc
    y = np.linalg.solve(L, u - h)
    return np.linalg.solve(L.T, y)


def _deriv(params, gravity, x, u):
    nl = len(x) // 2
    return np.concatenate([x[nl:], forward_accel(params, gravity, x[:nl], x[nl:], u)])


def step(params, gravity, x, u, dt, method=0):
    if method == 0:
        return x + dt * _deriv(params, gravity, x, u)
    k1 = _deriv(params, gravity, x, u)
    k2 = _deriv(params, gravity, x + 0.5 * dt * k1, u)
    k3 = _deriv(params, gravity, x + 0.5 * dt * k2, u)
    k4 = _deriv(params, gravity, x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rollout(params, gravity, x_s, U, dt):
    N = U.shape[0]
    X = np.empty((N, len(x_s)))
    prev = x_s
    for t in range(N):
        X[t] = step(params, gravity, prev, U[t], dt)
        if not np.all(np.isfinite(X[t])):
            return X, t
        prev = X[t]
    return X, -1


def linearize(params, gravity, xs, U, dt, h):
    N, m = U.shape
    n = xs.shape[1]
    A = np.empty((N, n, n))
    B = np.empty((N, n, m))
    for t in range(N):
        x, u = xs[t], U[t]
        for j in range(n):
            xp = x.copy()
            xp[j] = x[j] + h
            fp = step(params, gravity, xp, u, dt)
            xp[j] = x[j] - h
            fm = step(params, gravity, xp, u, dt)
            A[t, :, j] = (fp - fm) / (2.0 * h)
        for j in range(m):
            up = u.copy()
            up[j] = u[j] + h
            fp = step(params, gravity, x, up, dt)
            up[j] = u[j] - h
            fm = step(params, gravity, x, up, dt)
            B[t, :, j] = (fp - fm) / (2.0 * h)
    return A, B

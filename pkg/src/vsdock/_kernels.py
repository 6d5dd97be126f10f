"""Compiled inner loops of the NMPC shooting problem.

State layout matches :mod:`vsdock.servo_model`; inputs are ``(N, 2)`` arrays.
"""
import numpy as np
from numba import njit

_TWO_PI = 2.0 * np.pi
_MIN_MODEL_DEPTH = 1e-6


@njit(cache=True)
def wrap(a):
    w = (a + np.pi) % _TWO_PI - np.pi
    if w == -np.pi:
        return np.pi
    return w


@njit(cache=True)
def rollout(x0, U, T, drift):
    """Forward-Euler rollout; ``drift`` is an additive rate (zeros for none)."""
    N = U.shape[0]
    m = x0.shape[0]
    n = (m - 2) // 2
    X = np.empty((N + 1, m))
    X[0] = x0
    for k in range(N):
        v = U[k, 0]
        w = U[k, 1]
        Z = X[k, m - 2]
        if Z < _MIN_MODEL_DEPTH:
            Z = _MIN_MODEL_DEPTH
        xbar = 0.0
        for i in range(n):
            xbar += X[k, 2 * i]
        xbar /= n
        for i in range(n):
            x = X[k, 2 * i]
            y = X[k, 2 * i + 1]
            X[k + 1, 2 * i] = x + T * (x / Z * v - (1.0 + x * x) * w + drift[2 * i])
            X[k + 1, 2 * i + 1] = y + T * (y / Z * v - x * y * w + drift[2 * i + 1])
        X[k + 1, m - 2] = X[k, m - 2] + T * (-v + w * xbar * Z + drift[m - 2])
        X[k + 1, m - 1] = X[k, m - 1] + T * (w + drift[m - 1])
    return X


@njit(cache=True)
def sensitivities(X, U, T):
    """dX[k]/dU for every k as an ``(N+1, m, 2N)`` array."""
    N = U.shape[0]
    m = X.shape[1]
    n = (m - 2) // 2
    S = np.zeros((N + 1, m, 2 * N))
    A = np.zeros((m, m))
    for k in range(N):
        v = U[k, 0]
        w = U[k, 1]
        Z = X[k, m - 2]
        if Z < _MIN_MODEL_DEPTH:
            Z = _MIN_MODEL_DEPTH
        xbar = 0.0
        for i in range(n):
            xbar += X[k, 2 * i]
        xbar /= n
        A[:, :] = 0.0
        for r in range(m):
            A[r, r] = 1.0
        for i in range(n):
            ix = 2 * i
            iy = ix + 1
            x = X[k, ix]
            y = X[k, iy]
            A[ix, ix] += T * (v / Z - 2.0 * x * w)
            A[ix, m - 2] += T * (-x * v / (Z * Z))
            A[iy, ix] += T * (-y * w)
            A[iy, iy] += T * (v / Z - x * w)
            A[iy, m - 2] += T * (-y * v / (Z * Z))
            A[m - 2, ix] += T * w * Z / n
        A[m - 2, m - 2] += T * w * xbar
        cols = 2 * k
        for r in range(m):
            for c in range(m):
                a = A[r, c]
                if a != 0.0:
                    for j in range(cols):
                        S[k + 1, r, j] += a * S[k, c, j]
        # input matrix T * L'(x_k)
        for i in range(n):
            x = X[k, 2 * i]
            y = X[k, 2 * i + 1]
            S[k + 1, 2 * i, cols] += T * x / Z
            S[k + 1, 2 * i, cols + 1] += T * (-(1.0 + x * x))
            S[k + 1, 2 * i + 1, cols] += T * y / Z
            S[k + 1, 2 * i + 1, cols + 1] += T * (-x * y)
        S[k + 1, m - 2, cols] += -T
        S[k + 1, m - 2, cols + 1] += T * xbar * Z
        S[k + 1, m - 1, cols + 1] += T
    return S


@njit(cache=True)
def terminal_error(xN, xd):
    e = xN - xd
    e[-1] = wrap(e[-1])
    return e


@njit(cache=True)
def objective(X, U, xd, Lp, RtR):
    r = Lp @ terminal_error(X[-1], xd)
    f = 0.0
    for i in range(r.shape[0]):
        f += r[i] * r[i]
    for k in range(U.shape[0]):
        u0 = U[k, 0]
        u1 = U[k, 1]
        f += u0 * (RtR[0, 0] * u0 + RtR[0, 1] * u1) + u1 * (RtR[1, 0] * u0 + RtR[1, 1] * u1)
    return f


@njit(cache=True)
def penalty(X, s_lo, s_hi, z_lo):
    """Sum of squared hinge violations at predicted steps 1..N."""
    m = X.shape[1]
    p = 0.0
    for k in range(1, X.shape[0]):
        for j in range(m - 2):
            d = s_lo[j] - X[k, j]
            if d > 0:
                p += d * d
            d = X[k, j] - s_hi[j]
            if d > 0:
                p += d * d
        d = z_lo - X[k, m - 2]
        if d > 0:
            p += d * d
    return p


@njit(cache=True)
def max_violation(X, s_lo, s_hi, z_lo):
    m = X.shape[1]
    worst = 0.0
    for k in range(1, X.shape[0]):
        for j in range(m - 2):
            worst = max(worst, s_lo[j] - X[k, j], X[k, j] - s_hi[j])
        worst = max(worst, z_lo - X[k, m - 2])
    return worst


@njit(cache=True)
def gauss_newton(X, S, U, xd, Lp, RtR, s_lo, s_hi, z_lo, mu):
    """Hessian approximation and gradient (halved) of objective + mu * penalty."""
    N = U.shape[0]
    m = X.shape[1]
    nv = 2 * N
    JT = Lp @ S[N]
    rT = Lp @ terminal_error(X[N], xd)
    H = JT.T @ JT
    g = JT.T @ rT
    for i in range(N):
        a = 2 * i
        for p in range(2):
            g[a + p] += RtR[p, 0] * U[i, 0] + RtR[p, 1] * U[i, 1]
            for q in range(2):
                H[a + p, a + q] += RtR[p, q]
    for k in range(1, N + 1):
        for j in range(m - 1):
            if j < m - 2:
                lo = s_lo[j] - X[k, j]
                hi = X[k, j] - s_hi[j]
                if lo > 0:
                    res = lo
                    sign = -1.0
                elif hi > 0:
                    res = hi
                    sign = 1.0
                else:
                    continue
            else:
                res = z_lo - X[k, j]
                if res <= 0:
                    continue
                sign = -1.0
            for a in range(nv):
                ra = sign * S[k, j, a]
                if ra == 0.0:
                    continue
                g[a] += mu * ra * res
                for b in range(nv):
                    H[a, b] += mu * ra * sign * S[k, j, b]
    return H, g

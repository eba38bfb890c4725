"""Compiled inner loops of the finite-volume solver.

Everything here works on plain float arrays and integer codes so numba can
compile it in nopython mode. The public, typed API lives in ``fvm_core``.
"""
import numpy as np
from numba import njit

# flux kinds
BURGERS = 0
CUBIC = 1
LINEAR = 2

# numerical fluxes
GODUNOV = 0
RUSANOV = 1

# reconstructions
NO_RECON = 0
WENO2 = 1

WENO_EPS = 1e-6
DEGENERATE_SPEED = 1e-14


@njit(cache=True, nogil=True, error_model="numpy")
def flux(kind, speed, u):
    if kind == BURGERS:
        return 0.5 * u * u
    if kind == CUBIC:
        return u * u * u / 3.0
    return speed * u


@njit(cache=True, nogil=True, error_model="numpy")
def flux_prime(kind, speed, u):
    if kind == BURGERS:
        return u
    if kind == CUBIC:
        return u * u
    return speed


@njit(cache=True, nogil=True, error_model="numpy")
def godunov(kind, speed, crit, uL, uR):
    fL = flux(kind, speed, uL)
    fR = flux(kind, speed, uR)
    if uL <= uR:
        best = min(fL, fR)
        for c in crit:
            if uL < c < uR:
                best = min(best, flux(kind, speed, c))
        return best
    best = max(fL, fR)
    for c in crit:
        if uR < c < uL:
            best = max(best, flux(kind, speed, c))
    return best


@njit(cache=True, nogil=True, error_model="numpy")
def rusanov(kind, speed, uL, uR):
    a = max(abs(flux_prime(kind, speed, uL)), abs(flux_prime(kind, speed, uR)))
    return 0.5 * (flux(kind, speed, uL) + flux(kind, speed, uR)) - 0.5 * a * (uR - uL)


@njit(cache=True, nogil=True, error_model="numpy")
def weno2(um, u0, up):
    dm = u0 - um
    dp = up - u0
    b0 = WENO_EPS + dm * dm
    b1 = WENO_EPS + dp * dp
    b0 = b0 * b0
    b1 = b1 * b1
    # right face: the downwind stencil (u0, up) carries weight 2/3
    a0 = (1.0 / 3.0) / b0
    a1 = (2.0 / 3.0) / b1
    right = u0 + 0.5 * (a0 * dm + a1 * dp) / (a0 + a1)
    a0 = (2.0 / 3.0) / b0
    a1 = (1.0 / 3.0) / b1
    left = u0 - 0.5 * (a0 * dm + a1 * dp) / (a0 + a1)
    return left, right


@njit(cache=True, nogil=True, error_model="numpy")
def fill_ghosts(u, g, periodic):
    n = u.size
    for i in range(n):
        g[i + 2] = u[i]
    if periodic:
        g[0] = u[n - 2]
        g[1] = u[n - 1]
        g[n + 2] = u[0]
        g[n + 3] = u[1]
    else:
        g[0] = u[0]
        g[1] = u[0]
        g[n + 2] = u[n - 1]
        g[n + 3] = u[n - 1]


@njit(cache=True, nogil=True, error_model="numpy")
def rhs(u, g, lf, rf, F, out, dx, kind, speed, crit, nflux, recon, periodic):
    """du/dt = -(F_{i+1/2} - F_{i-1/2}) / dx; F[j] is the flux at the left face of g[j]."""
    n = u.size
    fill_ghosts(u, g, periodic)
    if recon == WENO2:
        for j in range(1, n + 3):
            lf[j], rf[j] = weno2(g[j - 1], g[j], g[j + 1])
    else:
        for j in range(n + 4):
            lf[j] = g[j]
            rf[j] = g[j]
    for j in range(2, n + 3):
        if nflux == GODUNOV:
            F[j] = godunov(kind, speed, crit, rf[j - 1], lf[j])
        else:
            F[j] = rusanov(kind, speed, rf[j - 1], lf[j])
    for i in range(n):
        out[i] = -(F[i + 3] - F[i + 2]) / dx


@njit(cache=True, nogil=True, error_model="numpy")
def max_speed(u, kind, speed):
    m = 0.0
    for i in range(u.size):
        a = abs(flux_prime(kind, speed, u[i]))
        if a > m:
            m = a
    return m


@njit(cache=True, nogil=True, error_model="numpy")
def stable_dt(u, dx, kind, speed, cfl):
    m = max_speed(u, kind, speed)
    if m < DEGENERATE_SPEED:
        return cfl * dx
    return cfl * dx / m


@njit(cache=True, nogil=True, error_model="numpy")
def evolve_row(u, dx, kind, speed, crit, nflux, recon, periodic, cfl, t0, t_end):
    """Advance ``u`` in place with SSP-RK2. Returns steps taken, or -1 on NaN/Inf."""
    n = u.size
    g = np.empty(n + 4)
    lf = np.empty(n + 4)
    rf = np.empty(n + 4)
    F = np.empty(n + 4)
    k = np.empty(n)
    us = np.empty(n)
    t = t0
    steps = 0
    while t < t_end:
        dt = stable_dt(u, dx, kind, speed, cfl)
        if not (dt > 0.0 and np.isfinite(dt)):
            return -1
        last = False
        if t + dt >= t_end:
            dt = t_end - t
            last = True
        rhs(u, g, lf, rf, F, k, dx, kind, speed, crit, nflux, recon, periodic)
        for i in range(n):
            us[i] = u[i] + dt * k[i]
        rhs(us, g, lf, rf, F, k, dx, kind, speed, crit, nflux, recon, periodic)
        bad = False
        for i in range(n):
            u[i] = 0.5 * u[i] + 0.5 * (us[i] + dt * k[i])
            if not np.isfinite(u[i]):
                bad = True
        steps += 1
        if bad:
            return -1
        t = t_end if last else t + dt
    return steps


@njit(cache=True, nogil=True, error_model="numpy")
def evolve_rows(U, steps, dx, kind, speed, crit, nflux, recon, periodic, cfl, t0, t_end):
    for r in range(U.shape[0]):
        steps[r] = evolve_row(U[r], dx, kind, speed, crit, nflux, recon, periodic, cfl, t0, t_end)


@njit(cache=True, nogil=True, error_model="numpy")
def godunov_array(kind, speed, crit, uL, uR, out):
    for i in range(uL.size):
        out[i] = godunov(kind, speed, crit, uL[i], uR[i])

"""Numba method-of-lines kernels with classical RK4 time stepping.

Grids include both end points.  With periodic boundaries the last node
duplicates the first: the unique nodes ``0 .. n-2`` are evolved and the
duplicate is copied afterwards.  With Dirichlet boundaries the boundary
nodes never change.
"""

import numba
import numpy as np

# 1D right-hand sides
BURGERS_VISC = 1  # u_t = lam1 u u_x + lam2 u_xx
BURGERS_U2VISC = 2  # u_t = lam1 u u_x + lam2 u^2 u_xx
BURGERS_ADV = 3  # u_t = lam1 u u_x
DIFFUSION_1D = 4  # u_t = lam1 u_xx

# 2D systems
SYS_RD = 0  # u_t = D lap u + R (v - u), v_t = D lap v + R (u - v)
SYS_SCALAR = 1  # u_t = c lap u - b.grad u
SYS_WAVE = 2  # u_t = w, w_t = c lap u - b.grad u - d w


@numba.njit(cache=True, inline="always")
def _weno5(a, b, c, d, e):
    """Left-biased fifth-order WENO value at i+1/2 from stencil i-2..i+2."""
    eps = 1e-6
    s0 = 13.0 / 12.0 * (a - 2.0 * b + c) ** 2 + 0.25 * (a - 4.0 * b + 3.0 * c) ** 2
    s1 = 13.0 / 12.0 * (b - 2.0 * c + d) ** 2 + 0.25 * (b - d) ** 2
    s2 = 13.0 / 12.0 * (c - 2.0 * d + e) ** 2 + 0.25 * (3.0 * c - 4.0 * d + e) ** 2
    w0 = 0.1 / (eps + s0) ** 2
    w1 = 0.6 / (eps + s1) ** 2
    w2 = 0.3 / (eps + s2) ** 2
    return (w0 * (2.0 * a - 7.0 * b + 11.0 * c) + w1 * (-b + 5.0 * c + 2.0 * d) + w2 * (2.0 * c + 5.0 * d - e)) / (
        6.0 * (w0 + w1 + w2)
    )


@numba.njit(cache=True)
def _rhs_1d(u, out, kind, lam1, lam2, dx, periodic, ext, fp, fm, g):
    n = u.shape[0]
    if periodic:
        m = n - 1
        for i in range(m + 6):
            ext[i] = u[(i - 3) % m]
    else:
        m = n
        for i in range(n):
            ext[i + 3] = u[i]
        for k in range(3):
            ext[k] = u[0]
            ext[n + 3 + k] = u[n - 1]

    if kind != DIFFUSION_1D:
        # lam1 u u_x = -(F(u))_x with F = -lam1 u^2 / 2, Lax-Friedrichs split
        alpha = 0.0
        for i in range(m + 6):
            a = abs(lam1 * ext[i])
            if a > alpha:
                alpha = a
        for i in range(m + 6):
            f = -0.5 * lam1 * ext[i] * ext[i]
            fp[i] = 0.5 * (f + alpha * ext[i])
            fm[i] = 0.5 * (f - alpha * ext[i])
        for j in range(2, m + 3):
            g[j] = _weno5(fp[j - 2], fp[j - 1], fp[j], fp[j + 1], fp[j + 2]) + _weno5(
                fm[j + 3], fm[j + 2], fm[j + 1], fm[j], fm[j - 1]
            )

    inv_dx2 = 1.0 / (dx * dx)
    for i in range(m):
        j = i + 3
        c = ext[j]
        uxx = (ext[j + 1] - 2.0 * c + ext[j - 1]) * inv_dx2
        if kind == DIFFUSION_1D:
            r = lam1 * uxx
        else:
            r = -(g[j] - g[j - 1]) / dx
            if kind == BURGERS_VISC:
                r += lam2 * uxx
            elif kind == BURGERS_U2VISC:
                r += lam2 * c * c * uxx
        out[i] = r

    if periodic:
        out[n - 1] = out[0]
    else:
        out[0] = 0.0
        out[n - 1] = 0.0


@numba.njit(cache=True)
def integrate_1d(u0, kind, lam1, lam2, dx, periodic, dt_out, n_out, nsub):
    """Return ``(frames, ok)``; frames has shape ``(n_out, len(u0))``."""
    n = u0.shape[0]
    frames = np.empty((n_out, n))
    u = u0.copy()
    frames[0] = u
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    ext = np.empty(n + 6)
    fp = np.empty(n + 6)
    fm = np.empty(n + 6)
    g = np.zeros(n + 6)
    dt = dt_out / nsub
    for step in range(1, n_out):
        for _ in range(nsub):
            _rhs_1d(u, k1, kind, lam1, lam2, dx, periodic, ext, fp, fm, g)
            for i in range(n):
                tmp[i] = u[i] + 0.5 * dt * k1[i]
            _rhs_1d(tmp, k2, kind, lam1, lam2, dx, periodic, ext, fp, fm, g)
            for i in range(n):
                tmp[i] = u[i] + 0.5 * dt * k2[i]
            _rhs_1d(tmp, k3, kind, lam1, lam2, dx, periodic, ext, fp, fm, g)
            for i in range(n):
                tmp[i] = u[i] + dt * k3[i]
            _rhs_1d(tmp, k4, kind, lam1, lam2, dx, periodic, ext, fp, fm, g)
            for i in range(n):
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(n):
            if not np.isfinite(u[i]):
                return frames, False
        frames[step] = u
    return frames, True


@numba.njit(cache=True)
def _rhs_2d(u, v, du, dv, kind, D, R, c, bx, by, damp, hx, hy, periodic):
    ny, nx = u.shape
    ihx2 = 1.0 / (hx * hx)
    ihy2 = 1.0 / (hy * hy)
    i2hx = 0.5 / hx
    i2hy = 0.5 / hy
    if periodic:
        my = ny - 1
        mx = nx - 1
        j0, j1, i0, i1 = 0, my, 0, mx
    else:
        my = ny
        mx = nx
        j0, j1, i0, i1 = 1, ny - 1, 1, nx - 1
    for j in range(j0, j1):
        jm = (j - 1) % my if periodic else j - 1
        jp = (j + 1) % my if periodic else j + 1
        for i in range(i0, i1):
            im = (i - 1) % mx if periodic else i - 1
            ip = (i + 1) % mx if periodic else i + 1
            uc = u[j, i]
            lap_u = (u[j, ip] - 2.0 * uc + u[j, im]) * ihx2 + (u[jp, i] - 2.0 * uc + u[jm, i]) * ihy2
            if kind == SYS_RD:
                vc = v[j, i]
                lap_v = (v[j, ip] - 2.0 * vc + v[j, im]) * ihx2 + (v[jp, i] - 2.0 * vc + v[jm, i]) * ihy2
                du[j, i] = D * lap_u + R * (vc - uc)
                dv[j, i] = D * lap_v + R * (uc - vc)
            else:
                adv = bx * (u[j, ip] - u[j, im]) * i2hx + by * (u[jp, i] - u[jm, i]) * i2hy
                if kind == SYS_SCALAR:
                    du[j, i] = c * lap_u - adv
                    dv[j, i] = 0.0
                else:
                    du[j, i] = v[j, i]
                    dv[j, i] = c * lap_u - adv - damp * v[j, i]
    if periodic:
        for j in range(my):
            du[j, nx - 1] = du[j, 0]
            dv[j, nx - 1] = dv[j, 0]
        for i in range(nx):
            du[ny - 1, i] = du[0, i]
            dv[ny - 1, i] = dv[0, i]
    else:
        for i in range(nx):
            du[0, i] = 0.0
            dv[0, i] = 0.0
            du[ny - 1, i] = 0.0
            dv[ny - 1, i] = 0.0
        for j in range(ny):
            du[j, 0] = 0.0
            dv[j, 0] = 0.0
            du[j, nx - 1] = 0.0
            dv[j, nx - 1] = 0.0


@numba.njit(cache=True)
def integrate_2d(u0, v0, kind, D, R, c, bx, by, damp, hx, hy, periodic, dt_out, n_out, nsub):
    """Return ``(u_frames, v_frames, ok)`` with frames of shape ``(n_out, ny, nx)``."""
    ny, nx = u0.shape
    uf = np.empty((n_out, ny, nx))
    vf = np.empty((n_out, ny, nx))
    u = u0.copy()
    v = v0.copy()
    uf[0] = u
    vf[0] = v
    ku1 = np.empty_like(u)
    ku2 = np.empty_like(u)
    ku3 = np.empty_like(u)
    ku4 = np.empty_like(u)
    kv1 = np.empty_like(u)
    kv2 = np.empty_like(u)
    kv3 = np.empty_like(u)
    kv4 = np.empty_like(u)
    tu = np.empty_like(u)
    tv = np.empty_like(u)
    dt = dt_out / nsub
    for step in range(1, n_out):
        for _ in range(nsub):
            _rhs_2d(u, v, ku1, kv1, kind, D, R, c, bx, by, damp, hx, hy, periodic)
            for j in range(ny):
                for i in range(nx):
                    tu[j, i] = u[j, i] + 0.5 * dt * ku1[j, i]
                    tv[j, i] = v[j, i] + 0.5 * dt * kv1[j, i]
            _rhs_2d(tu, tv, ku2, kv2, kind, D, R, c, bx, by, damp, hx, hy, periodic)
            for j in range(ny):
                for i in range(nx):
                    tu[j, i] = u[j, i] + 0.5 * dt * ku2[j, i]
                    tv[j, i] = v[j, i] + 0.5 * dt * kv2[j, i]
            _rhs_2d(tu, tv, ku3, kv3, kind, D, R, c, bx, by, damp, hx, hy, periodic)
            for j in range(ny):
                for i in range(nx):
                    tu[j, i] = u[j, i] + dt * ku3[j, i]
                    tv[j, i] = v[j, i] + dt * kv3[j, i]
            _rhs_2d(tu, tv, ku4, kv4, kind, D, R, c, bx, by, damp, hx, hy, periodic)
            for j in range(ny):
                for i in range(nx):
                    u[j, i] += dt / 6.0 * (ku1[j, i] + 2.0 * ku2[j, i] + 2.0 * ku3[j, i] + ku4[j, i])
                    v[j, i] += dt / 6.0 * (kv1[j, i] + 2.0 * kv2[j, i] + 2.0 * kv3[j, i] + kv4[j, i])
        for j in range(ny):
            for i in range(nx):
                if not (np.isfinite(u[j, i]) and np.isfinite(v[j, i])):
                    return uf, vf, False
        uf[step] = u
        vf[step] = v
    return uf, vf, True

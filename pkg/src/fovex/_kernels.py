"""Compiled kernels for volume rendering and field fitting.

Single-threaded numba kernels, no fastmath, so results are deterministic.
Raw grids are stored float32; every position, weight, activation, and
accumulation inside the kernels is float64. The density grid is passed as a
flat array in C order over (x, y, z); the color grid appends the channel as
the fastest axis (flat index = node * 3 + channel).

Quadrature: midpoint samples t_i = near + (i + 0.5) * delta with
delta = (far - near) / samples, possibly a different far per ray.
Transmittance updates subtractively (T <- T - w), which makes
sum(w) + T_final = 1 hold to float64 rounding by construction.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _softplus(x):
    if x > 30.0:
        return x
    return np.log1p(np.exp(x))


@njit(cache=True, inline="always")
def _logistic(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def render_rays_kernel(
    dens,
    col,
    d0,
    d1,
    d2,
    lo0,
    lo1,
    lo2,
    s0,
    s1,
    s2,
    origins,
    dirs,
    fars,
    near,
    samples,
    bg0,
    bg1,
    bg2,
    early_eps,
    out_rgb,
    out_t,
):
    st0 = d1 * d2
    st1 = d2
    for r in range(origins.shape[0]):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        delta = (fars[r] - near) / samples
        t_acc = 1.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        for i in range(samples):
            t = near + (i + 0.5) * delta
            gx = (ox + t * dx - lo0) * s0
            gy = (oy + t * dy - lo1) * s1
            gz = (oz + t * dz - lo2) * s2
            if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > d0 - 1.0 or gy > d1 - 1.0 or gz > d2 - 1.0:
                continue
            ix = int(gx)
            iy = int(gy)
            iz = int(gz)
            if ix > d0 - 2:
                ix = d0 - 2
            if iy > d1 - 2:
                iy = d1 - 2
            if iz > d2 - 2:
                iz = d2 - 2
            fx = gx - ix
            fy = gy - iy
            fz = gz - iz
            b = ix * st0 + iy * st1 + iz
            w000 = (1.0 - fx) * (1.0 - fy) * (1.0 - fz)
            w001 = (1.0 - fx) * (1.0 - fy) * fz
            w010 = (1.0 - fx) * fy * (1.0 - fz)
            w011 = (1.0 - fx) * fy * fz
            w100 = fx * (1.0 - fy) * (1.0 - fz)
            w101 = fx * (1.0 - fy) * fz
            w110 = fx * fy * (1.0 - fz)
            w111 = fx * fy * fz
            draw = (
                w000 * dens[b]
                + w001 * dens[b + 1]
                + w010 * dens[b + st1]
                + w011 * dens[b + st1 + 1]
                + w100 * dens[b + st0]
                + w101 * dens[b + st0 + 1]
                + w110 * dens[b + st0 + st1]
                + w111 * dens[b + st0 + st1 + 1]
            )
            sigma = _softplus(draw)
            alpha = -np.expm1(-sigma * delta)
            w = t_acc * alpha
            if w > 0.0:
                cb = b * 3
                craw0 = (
                    w000 * col[cb]
                    + w001 * col[cb + 3]
                    + w010 * col[cb + st1 * 3]
                    + w011 * col[cb + st1 * 3 + 3]
                    + w100 * col[cb + st0 * 3]
                    + w101 * col[cb + st0 * 3 + 3]
                    + w110 * col[cb + (st0 + st1) * 3]
                    + w111 * col[cb + (st0 + st1) * 3 + 3]
                )
                craw1 = (
                    w000 * col[cb + 1]
                    + w001 * col[cb + 4]
                    + w010 * col[cb + st1 * 3 + 1]
                    + w011 * col[cb + st1 * 3 + 4]
                    + w100 * col[cb + st0 * 3 + 1]
                    + w101 * col[cb + st0 * 3 + 4]
                    + w110 * col[cb + (st0 + st1) * 3 + 1]
                    + w111 * col[cb + (st0 + st1) * 3 + 4]
                )
                craw2 = (
                    w000 * col[cb + 2]
                    + w001 * col[cb + 5]
                    + w010 * col[cb + st1 * 3 + 2]
                    + w011 * col[cb + st1 * 3 + 5]
                    + w100 * col[cb + st0 * 3 + 2]
                    + w101 * col[cb + st0 * 3 + 5]
                    + w110 * col[cb + (st0 + st1) * 3 + 2]
                    + w111 * col[cb + (st0 + st1) * 3 + 5]
                )
                c0 += w * _logistic(craw0)
                c1 += w * _logistic(craw1)
                c2 += w * _logistic(craw2)
                t_acc -= w
            if t_acc < early_eps:
                break
        out_rgb[r, 0] = c0 + t_acc * bg0
        out_rgb[r, 1] = c1 + t_acc * bg1
        out_rgb[r, 2] = c2 + t_acc * bg2
        out_t[r] = t_acc


@njit(cache=True)
def fit_forward_backward_kernel(
    dens,
    col,
    d0,
    d1,
    d2,
    lo0,
    lo1,
    lo2,
    s0,
    s1,
    s2,
    origins,
    dirs,
    fars,
    targets,
    near,
    samples,
    bg0,
    bg1,
    bg2,
    early_eps,
    grad_d,
    grad_c,
):
    """Photometric MSE over a ray batch plus analytic raw-grid gradients.

    Returns the mean squared error over all ray channels. Gradients are
    accumulated into ``grad_d`` / ``grad_c`` (callers zero them first).
    The backward pass recomputes sample positions and trilinear weights and
    reuses cached activations and transmittances from the forward pass.
    """
    st0 = d1 * d2
    st1 = d2
    n = origins.shape[0]
    inv_n = 1.0 / (n * 3.0)
    cw = np.empty(samples)
    ct = np.empty(samples)
    cds = np.empty(samples)  # softplus derivative; negative marks skipped samples
    cc = np.empty((samples, 3))
    loss = 0.0
    for r in range(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        delta = (fars[r] - near) / samples
        t_acc = 1.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        count = samples
        for i in range(samples):
            t = near + (i + 0.5) * delta
            gx = (ox + t * dx - lo0) * s0
            gy = (oy + t * dy - lo1) * s1
            gz = (oz + t * dz - lo2) * s2
            if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > d0 - 1.0 or gy > d1 - 1.0 or gz > d2 - 1.0:
                cds[i] = -1.0
                continue
            ix = int(gx)
            iy = int(gy)
            iz = int(gz)
            if ix > d0 - 2:
                ix = d0 - 2
            if iy > d1 - 2:
                iy = d1 - 2
            if iz > d2 - 2:
                iz = d2 - 2
            fx = gx - ix
            fy = gy - iy
            fz = gz - iz
            b = ix * st0 + iy * st1 + iz
            w000 = (1.0 - fx) * (1.0 - fy) * (1.0 - fz)
            w001 = (1.0 - fx) * (1.0 - fy) * fz
            w010 = (1.0 - fx) * fy * (1.0 - fz)
            w011 = (1.0 - fx) * fy * fz
            w100 = fx * (1.0 - fy) * (1.0 - fz)
            w101 = fx * (1.0 - fy) * fz
            w110 = fx * fy * (1.0 - fz)
            w111 = fx * fy * fz
            draw = (
                w000 * dens[b]
                + w001 * dens[b + 1]
                + w010 * dens[b + st1]
                + w011 * dens[b + st1 + 1]
                + w100 * dens[b + st0]
                + w101 * dens[b + st0 + 1]
                + w110 * dens[b + st0 + st1]
                + w111 * dens[b + st0 + st1 + 1]
            )
            cb = b * 3
            craw0 = (
                w000 * col[cb]
                + w001 * col[cb + 3]
                + w010 * col[cb + st1 * 3]
                + w011 * col[cb + st1 * 3 + 3]
                + w100 * col[cb + st0 * 3]
                + w101 * col[cb + st0 * 3 + 3]
                + w110 * col[cb + (st0 + st1) * 3]
                + w111 * col[cb + (st0 + st1) * 3 + 3]
            )
            craw1 = (
                w000 * col[cb + 1]
                + w001 * col[cb + 4]
                + w010 * col[cb + st1 * 3 + 1]
                + w011 * col[cb + st1 * 3 + 4]
                + w100 * col[cb + st0 * 3 + 1]
                + w101 * col[cb + st0 * 3 + 4]
                + w110 * col[cb + (st0 + st1) * 3 + 1]
                + w111 * col[cb + (st0 + st1) * 3 + 4]
            )
            craw2 = (
                w000 * col[cb + 2]
                + w001 * col[cb + 5]
                + w010 * col[cb + st1 * 3 + 2]
                + w011 * col[cb + st1 * 3 + 5]
                + w100 * col[cb + st0 * 3 + 2]
                + w101 * col[cb + st0 * 3 + 5]
                + w110 * col[cb + (st0 + st1) * 3 + 2]
                + w111 * col[cb + (st0 + st1) * 3 + 5]
            )
            sp = _logistic(draw)  # derivative of softplus
            sigma = _softplus(draw)
            alpha = -np.expm1(-sigma * delta)
            w = t_acc * alpha
            cds[i] = sp
            ct[i] = t_acc
            cw[i] = w
            cc[i, 0] = _logistic(craw0)
            cc[i, 1] = _logistic(craw1)
            cc[i, 2] = _logistic(craw2)
            c0 += w * cc[i, 0]
            c1 += w * cc[i, 1]
            c2 += w * cc[i, 2]
            t_acc -= w
            if t_acc < early_eps:
                count = i + 1
                break
        c0 += t_acc * bg0
        c1 += t_acc * bg1
        c2 += t_acc * bg2
        e0 = c0 - targets[r, 0]
        e1 = c1 - targets[r, 1]
        e2 = c2 - targets[r, 2]
        loss += e0 * e0 + e1 * e1 + e2 * e2
        g0 = 2.0 * e0 * inv_n
        g1 = 2.0 * e1 * inv_n
        g2 = 2.0 * e2 * inv_n
        # Suffix sums S_i = sum_{j>i} w_j c_j + T_final * bg, built backward.
        suf0 = t_acc * bg0
        suf1 = t_acc * bg1
        suf2 = t_acc * bg2
        for i in range(count - 1, -1, -1):
            if cds[i] < 0.0:
                continue
            w = cw[i]
            tnext = ct[i] - w
            dsig0 = delta * (tnext * cc[i, 0] - suf0)
            dsig1 = delta * (tnext * cc[i, 1] - suf1)
            dsig2 = delta * (tnext * cc[i, 2] - suf2)
            gdraw = (g0 * dsig0 + g1 * dsig1 + g2 * dsig2) * cds[i]
            gc0 = g0 * w * cc[i, 0] * (1.0 - cc[i, 0])
            gc1 = g1 * w * cc[i, 1] * (1.0 - cc[i, 1])
            gc2 = g2 * w * cc[i, 2] * (1.0 - cc[i, 2])
            suf0 += w * cc[i, 0]
            suf1 += w * cc[i, 1]
            suf2 += w * cc[i, 2]
            t = near + (i + 0.5) * delta
            gx = (ox + t * dx - lo0) * s0
            gy = (oy + t * dy - lo1) * s1
            gz = (oz + t * dz - lo2) * s2
            ix = int(gx)
            iy = int(gy)
            iz = int(gz)
            if ix > d0 - 2:
                ix = d0 - 2
            if iy > d1 - 2:
                iy = d1 - 2
            if iz > d2 - 2:
                iz = d2 - 2
            fx = gx - ix
            fy = gy - iy
            fz = gz - iz
            b = ix * st0 + iy * st1 + iz
            w000 = (1.0 - fx) * (1.0 - fy) * (1.0 - fz)
            w001 = (1.0 - fx) * (1.0 - fy) * fz
            w010 = (1.0 - fx) * fy * (1.0 - fz)
            w011 = (1.0 - fx) * fy * fz
            w100 = fx * (1.0 - fy) * (1.0 - fz)
            w101 = fx * (1.0 - fy) * fz
            w110 = fx * fy * (1.0 - fz)
            w111 = fx * fy * fz
            grad_d[b] += gdraw * w000
            grad_d[b + 1] += gdraw * w001
            grad_d[b + st1] += gdraw * w010
            grad_d[b + st1 + 1] += gdraw * w011
            grad_d[b + st0] += gdraw * w100
            grad_d[b + st0 + 1] += gdraw * w101
            grad_d[b + st0 + st1] += gdraw * w110
            grad_d[b + st0 + st1 + 1] += gdraw * w111
            cb = b * 3
            grad_c[cb] += gc0 * w000
            grad_c[cb + 3] += gc0 * w001
            grad_c[cb + st1 * 3] += gc0 * w010
            grad_c[cb + st1 * 3 + 3] += gc0 * w011
            grad_c[cb + st0 * 3] += gc0 * w100
            grad_c[cb + st0 * 3 + 3] += gc0 * w101
            grad_c[cb + (st0 + st1) * 3] += gc0 * w110
            grad_c[cb + (st0 + st1) * 3 + 3] += gc0 * w111
            grad_c[cb + 1] += gc1 * w000
            grad_c[cb + 4] += gc1 * w001
            grad_c[cb + st1 * 3 + 1] += gc1 * w010
            grad_c[cb + st1 * 3 + 4] += gc1 * w011
            grad_c[cb + st0 * 3 + 1] += gc1 * w100
            grad_c[cb + st0 * 3 + 4] += gc1 * w101
            grad_c[cb + (st0 + st1) * 3 + 1] += gc1 * w110
            grad_c[cb + (st0 + st1) * 3 + 4] += gc1 * w111
            grad_c[cb + 2] += gc2 * w000
            grad_c[cb + 5] += gc2 * w001
            grad_c[cb + st1 * 3 + 2] += gc2 * w010
            grad_c[cb + st1 * 3 + 5] += gc2 * w011
            grad_c[cb + st0 * 3 + 2] += gc2 * w100
            grad_c[cb + st0 * 3 + 5] += gc2 * w101
            grad_c[cb + (st0 + st1) * 3 + 2] += gc2 * w110
            grad_c[cb + (st0 + st1) * 3 + 5] += gc2 * w111
    return loss * inv_n

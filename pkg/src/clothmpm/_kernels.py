"""Numba kernels for the particle/grid loops.

All loops are sequential, so scatter order (and therefore floating-point
summation order) is fixed and results are bit-reproducible.
Grid arrays are flat with ``idx = (ix * ny + iy) * nz + iz``.
"""

import math

import numba as nb
import numpy as np

from .constitutive import mm3_into, mm3t_into, piola_into, qr_into

_JIT = dict(cache=True, nogil=True)


@nb.njit(**_JIT)
def stencil(xp, lo, inv_h, base, w):
    """Quadratic B-spline base node and per-axis weights for one position."""
    for a in range(3):
        g = (xp[a] - lo[a]) * inv_h
        b = int(math.floor(g - 0.5))
        fx = g - b
        base[a] = b
        w[a, 0] = 0.5 * (1.5 - fx) ** 2
        w[a, 1] = 0.75 - (fx - 1.0) ** 2
        w[a, 2] = 0.5 * (fx - 0.5) ** 2


@nb.njit(**_JIT)
def stress_matrices(d, D_inv, vol, E, nu, gamma, kappa, out):
    """out[f] = vol[f] * P(F) D^-T with F = d D^-1, i.e. dEnergy/dd per face."""
    F = np.empty((3, 3))
    Q = np.empty((3, 3))
    R = np.empty((3, 3))
    P = np.empty((3, 3))
    work = np.empty((3, 3, 3))
    for f in range(d.shape[0]):
        mm3_into(d[f], D_inv[f], F)
        qr_into(F, Q, R)
        piola_into(Q, R, E, nu, gamma, kappa, work, P)
        mm3t_into(P, D_inv[f], out[f])
        w = vol[f]
        for i in range(3):
            for j in range(3):
                out[f, i, j] *= w


@nb.njit(**_JIT)
def vertex_force_gradients(faces, A, nv, out):
    """Gradient of the in-plane (d1, d2) energy part with respect to vertex positions."""
    out[:] = 0.0
    for f in range(faces.shape[0]):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        for k in range(3):
            out[a, k] -= A[f, k, 0] + A[f, k, 1]
            out[b, k] += A[f, k, 0]
            out[c, k] += A[f, k, 1]


@nb.njit(**_JIT)
def clear_nodes(active, n_active, touched, gm, gmv, gv):
    for k in range(n_active):
        i = active[k]
        touched[i] = 0
        gm[i] = 0.0
        gmv[i, 0] = gmv[i, 1] = gmv[i, 2] = 0.0
        gv[i, 0] = gv[i, 1] = gv[i, 2] = 0.0


@nb.njit(**_JIT)
def p2g(x, v, C, m, nv, vgrad, A, d, lo, h, dims, dt, gm, gmv, touched, active):
    """APIC/MLS particle-to-grid transfer with mesh-based elastic forces.

    Vertex particles (indices < nv) carry the d1/d2 edge forces through
    ``vgrad`` and transfer APIC momentum. Face particles are kinematic
    quadrature points (velocity interpolated from their vertices): they
    transfer plain PIC momentum, since an affine term on a slaved velocity
    feeds a slowly growing in-plane mode, and carry the d3 force.
    Returns the number of active nodes.
    """
    inv_h = 1.0 / h
    dinv = 4.0 * inv_h * inv_h
    ny, nz = dims[1], dims[2]
    base = np.empty(3, np.int64)
    w = np.empty((3, 3))
    n_active = 0
    for p in range(x.shape[0]):
        stencil(x[p], lo, inv_h, base, w)
        mp = m[p]
        is_face = p >= nv
        if is_face:
            f = p - nv
        for i in range(3):
            xi = (base[0] + i) * h + lo[0] - x[p, 0]
            for j in range(3):
                xj = (base[1] + j) * h + lo[1] - x[p, 1]
                wij = w[0, i] * w[1, j]
                for k in range(3):
                    xk = (base[2] + k) * h + lo[2] - x[p, 2]
                    wt = wij * w[2, k]
                    idx = ((base[0] + i) * ny + base[1] + j) * nz + base[2] + k
                    if touched[idx] == 0:
                        touched[idx] = 1
                        active[n_active] = idx
                        n_active += 1
                    gm[idx] += wt * mp
                    for a in range(3):
                        if is_face:
                            aff = 0.0
                        else:
                            aff = C[p, a, 0] * xi + C[p, a, 1] * xj + C[p, a, 2] * xk
                        mom = wt * mp * (v[p, a] + aff)
                        if is_face:
                            proj = dinv * wt * (xi * d[f, 0, 2] + xj * d[f, 1, 2] + xk * d[f, 2, 2])
                            mom -= dt * A[f, a, 2] * proj
                        else:
                            mom -= dt * wt * vgrad[p, a]
                        gmv[idx, a] += mom
    return n_active


@nb.njit(**_JIT)
def grid_update(active, n_active, dims, boundary, gravity, dt, gm, gmv, gv):
    ny, nz = dims[1], dims[2]
    for k in range(n_active):
        idx = active[k]
        mass = gm[idx]
        if mass <= 0.0:
            gv[idx, 0] = gv[idx, 1] = gv[idx, 2] = 0.0
            continue
        for a in range(3):
            gv[idx, a] = gmv[idx, a] / mass + dt * gravity[a]
        ix = idx // (ny * nz)
        iy = (idx // nz) % ny
        iz = idx % nz
        if ix < boundary or ix >= dims[0] - boundary:
            gv[idx, 0] = 0.0
        if iy < boundary or iy >= dims[1] - boundary:
            gv[idx, 1] = 0.0
        if iz < boundary or iz >= dims[2] - boundary:
            gv[idx, 2] = 0.0


@nb.njit(**_JIT)
def rasterize(bary, vel, nrm, lo, h, dims, slot, sw, sv, sn, nodes):
    """Scatter face velocities/normals to the 27 nodes around each barycenter.

    ``slot`` maps a grid node to its compact index (-1 when untouched) and is
    restored to -1 before returning. Returns (number of compact nodes, number
    of (face, node) scatter writes).
    """
    inv_h = 1.0 / h
    ny, nz = dims[1], dims[2]
    base = np.empty(3, np.int64)
    w = np.empty((3, 3))
    n = 0
    writes = 0
    for f in range(bary.shape[0]):
        stencil(bary[f], lo, inv_h, base, w)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    wt = w[0, i] * w[1, j] * w[2, k]
                    idx = ((base[0] + i) * ny + base[1] + j) * nz + base[2] + k
                    s = slot[idx]
                    if s < 0:
                        s = n
                        slot[idx] = n
                        nodes[n] = idx
                        sw[n] = 0.0
                        for a in range(3):
                            sv[n, a] = 0.0
                            sn[n, a] = 0.0
                        n += 1
                    sw[s] += wt
                    for a in range(3):
                        sv[s, a] += wt * vel[f, a]
                        sn[s, a] += wt * nrm[f, a]
                    writes += 1
    for s in range(n):
        slot[nodes[s]] = -1
    return n, writes


@nb.njit(**_JIT)
def finalize_collider(n, sw, sv, sn, sticky, eps):
    for s in range(n):
        wc = sw[s]
        sticky[s] = 0
        if wc > 0.0:
            for a in range(3):
                sv[s, a] /= wc
            nn = math.sqrt(sn[s, 0] ** 2 + sn[s, 1] ** 2 + sn[s, 2] ** 2)
            if nn < eps:
                sticky[s] = 1
                sn[s, 0] = sn[s, 1] = sn[s, 2] = 0.0
            else:
                for a in range(3):
                    sn[s, a] /= nn


@nb.njit(**_JIT)
def project(nodes, sw, sv, sn, sticky, gm, gv, friction, tol):
    """Remove the inward normal part of the velocity relative to the collider.

    Relative normal speeds in [-tol, 0) count as separating; this keeps a second
    application from rewriting nodes whose residual is pure rounding.
    """
    for s in range(nodes.shape[0]):
        if sw[s] <= 0.0:
            continue
        idx = nodes[s]
        if gm[idx] <= 0.0:
            continue
        if sticky[s]:
            for a in range(3):
                gv[idx, a] = sv[s, a]
            continue
        r0 = gv[idx, 0] - sv[s, 0]
        r1 = gv[idx, 1] - sv[s, 1]
        r2 = gv[idx, 2] - sv[s, 2]
        dn = r0 * sn[s, 0] + r1 * sn[s, 1] + r2 * sn[s, 2]
        if dn < -tol:
            r0 -= dn * sn[s, 0]
            r1 -= dn * sn[s, 1]
            r2 -= dn * sn[s, 2]
            if friction > 0.0:
                vt = math.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
                if vt > 0.0:
                    scale = max(0.0, vt + friction * dn) / vt
                    r0 *= scale
                    r1 *= scale
                    r2 *= scale
            gv[idx, 0] = r0 + sv[s, 0]
            gv[idx, 1] = r1 + sv[s, 1]
            gv[idx, 2] = r2 + sv[s, 2]


@nb.njit(**_JIT)
def g2p(x, v, C, nv, lo, h, dims, dt, gv):
    """Gather velocity and affine matrix; advect vertex particles."""
    inv_h = 1.0 / h
    dinv = 4.0 * inv_h * inv_h
    ny, nz = dims[1], dims[2]
    base = np.empty(3, np.int64)
    w = np.empty((3, 3))
    B = np.empty((3, 3))
    for p in range(x.shape[0]):
        stencil(x[p], lo, inv_h, base, w)
        nvx = 0.0
        nvy = 0.0
        nvz = 0.0
        B[:] = 0.0
        for i in range(3):
            xi = (base[0] + i) * h + lo[0] - x[p, 0]
            for j in range(3):
                xj = (base[1] + j) * h + lo[1] - x[p, 1]
                wij = w[0, i] * w[1, j]
                for k in range(3):
                    xk = (base[2] + k) * h + lo[2] - x[p, 2]
                    wt = wij * w[2, k]
                    idx = ((base[0] + i) * ny + base[1] + j) * nz + base[2] + k
                    g0, g1, g2 = gv[idx, 0], gv[idx, 1], gv[idx, 2]
                    nvx += wt * g0
                    nvy += wt * g1
                    nvz += wt * g2
                    B[0, 0] += wt * g0 * xi
                    B[0, 1] += wt * g0 * xj
                    B[0, 2] += wt * g0 * xk
                    B[1, 0] += wt * g1 * xi
                    B[1, 1] += wt * g1 * xj
                    B[1, 2] += wt * g1 * xk
                    B[2, 0] += wt * g2 * xi
                    B[2, 1] += wt * g2 * xj
                    B[2, 2] += wt * g2 * xk
        v[p, 0], v[p, 1], v[p, 2] = nvx, nvy, nvz
        for a in range(3):
            for b in range(3):
                C[p, a, b] = dinv * B[a, b]
        if p < nv:
            x[p, 0] += dt * nvx
            x[p, 1] += dt * nvy
            x[p, 2] += dt * nvz


@nb.njit(**_JIT)
def update_frames(x, v, C, faces, nv, dt, d, D_inv, cloth_friction, gamma, kappa, eps):
    """Rebuild d1, d2 from vertex edges, advect d3 by (I + dt C), slave face
    particles to their triangles (barycenter position, mean vertex velocity),
    then return-map the normal part.

    ``D_inv`` must be expressed in the rest tangent frame, so column 3 of
    ``F = d D^-1`` equals ``d3``. With ``F = Q R``: if ``R33 > 1`` the layer is
    separating and ``d3`` is reset to the unit deformed normal. If
    ``cloth_friction >= 0`` and the layer is compressed, the shear part
    ``(R13, R23)`` is clamped to the cone
    ``gamma |(R13, R23)| <= cloth_friction * kappa (1 - R33)^2``.
    Returns the number of collapsed faces.
    """
    collapsed = 0
    F = np.empty((3, 3))
    Q = np.empty((3, 3))
    R = np.empty((3, 3))
    for f in range(faces.shape[0]):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        p = nv + f
        for k in range(3):
            d[f, k, 0] = x[b, k] - x[a, k]
            d[f, k, 1] = x[c, k] - x[a, k]
            x[p, k] = (x[a, k] + x[b, k] + x[c, k]) / 3.0
            v[p, k] = (v[a, k] + v[b, k] + v[c, k]) / 3.0
        n0, n1, n2 = d[f, 0, 2], d[f, 1, 2], d[f, 2, 2]
        for k in range(3):
            d[f, k, 2] += dt * (C[p, k, 0] * n0 + C[p, k, 1] * n1 + C[p, k, 2] * n2)
        c0 = d[f, 1, 0] * d[f, 2, 1] - d[f, 2, 0] * d[f, 1, 1]
        c1 = d[f, 2, 0] * d[f, 0, 1] - d[f, 0, 0] * d[f, 2, 1]
        c2 = d[f, 0, 0] * d[f, 1, 1] - d[f, 1, 0] * d[f, 0, 1]
        if 0.5 * math.sqrt(c0 * c0 + c1 * c1 + c2 * c2) < eps:
            collapsed += 1
            continue
        mm3_into(d[f], D_inv[f], F)
        qr_into(F, Q, R)
        r13, r23, r33 = R[0, 2], R[1, 2], R[2, 2]
        if r33 > 1.0:
            r13 = 0.0
            r23 = 0.0
            r33 = 1.0
        elif cloth_friction >= 0.0:
            rn = math.sqrt(r13 * r13 + r23 * r23)
            limit = cloth_friction * kappa * (1.0 - r33) ** 2
            if gamma * rn > limit:
                s = limit / (gamma * rn)
                r13 *= s
                r23 *= s
            else:
                continue
        else:
            continue
        for k in range(3):
            d[f, k, 2] = Q[k, 0] * r13 + Q[k, 1] * r23 + Q[k, 2] * r33
    return collapsed


# status codes returned by run_substeps
OK, CFL, DOMAIN, COLLAPSE, COLLIDER_DOMAIN = 0, 1, 2, 3, 4


@nb.njit(**_JIT)
def collider_faces(X0, X1, s, static, cfaces, bary, nrm, eps_area):
    """Barycenters and unit normals of the collider interpolated at ``s``."""
    for f in range(cfaces.shape[0]):
        p = np.empty((3, 3))
        for r in range(3):
            vi = cfaces[f, r]
            for k in range(3):
                if static:
                    p[r, k] = X0[vi, k]
                else:
                    p[r, k] = (1.0 - s) * X0[vi, k] + s * X1[vi, k]
        e1 = p[1] - p[0]
        e2 = p[2] - p[0]
        c0 = e1[1] * e2[2] - e1[2] * e2[1]
        c1 = e1[2] * e2[0] - e1[0] * e2[2]
        c2 = e1[0] * e2[1] - e1[1] * e2[0]
        nn = math.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
        for k in range(3):
            bary[f, k] = (p[0, k] + p[1, k] + p[2, k]) / 3.0
        if 0.5 * nn < eps_area:
            nrm[f, 0] = nrm[f, 1] = nrm[f, 2] = 0.0
        else:
            nrm[f, 0] = c0 / nn
            nrm[f, 1] = c1 / nn
            nrm[f, 2] = c2 / nn


@nb.njit(**_JIT)
def _inside(xp, lo, h, dims):
    for a in range(3):
        g = (xp[a] - lo[a]) / h
        if not (g >= 0.5 and g < dims[a] - 1.5):
            return False
    return True


@nb.njit(**_JIT)
def run_substeps(x, v, C, m, faces, nv, d, D_inv, vol, pinned, pinned_x,
                 E, nu, gamma, kappa, cloth_friction,
                 lo, h, dims, boundary, gravity, dt, substeps, strict,
                 gm, gmv, gv, touched, active, n_active,
                 X0, X1, static, cfaces, cvel, friction, slot,
                 bary, nrm, sw, sv, sn, nodes, sticky,
                 normal_eps, proj_tol, collapse_eps, degenerate_area, stats):
    """All substeps of one frame in a single compiled call.

    Performs the same operations in the same order as the per-substep Python
    path. ``stats`` receives [substeps done, max touched collider nodes,
    clamped particles, collapsed faces, offending index]. Returns a status code
    and the final active-node count.
    """
    nf = faces.shape[0]
    A = np.zeros((nf, 3, 3))
    vgrad = np.zeros((nv, 3))
    lo_c = np.empty(3)
    hi_c = np.empty(3)
    for a in range(3):
        lo_c[a] = lo[a] + 0.75 * h
        hi_c[a] = lo[a] + (dims[a] - 1.75) * h
    ncf = cfaces.shape[0]
    for k in range(substeps):
        # domain
        for p in range(x.shape[0]):
            if not _inside(x[p], lo, h, dims):
                if strict:
                    stats[4] = p
                    return DOMAIN, n_active
                stats[2] += 1
                for a in range(3):
                    x[p, a] = min(max(x[p, a], lo_c[a]), hi_c[a])
        # CFL
        vmax = 0.0
        for p in range(x.shape[0]):
            s2 = v[p, 0] * v[p, 0] + v[p, 1] * v[p, 1] + v[p, 2] * v[p, 2]
            if not s2 <= vmax:
                vmax = s2
        if not math.isfinite(vmax) or math.sqrt(vmax) * dt >= h:
            stats[4] = k
            return CFL, n_active
        if nf:
            stress_matrices(d, D_inv, vol, E, nu, gamma, kappa, A)
            vertex_force_gradients(faces, A, nv, vgrad)
        clear_nodes(active, n_active, touched, gm, gmv, gv)
        n_active = p2g(x, v, C, m, nv, vgrad, A, d, lo, h, dims, dt, gm, gmv, touched, active)
        grid_update(active, n_active, dims, boundary, gravity, dt, gm, gmv, gv)
        if ncf:
            collider_faces(X0, X1, (k + 1) / substeps, static, cfaces, bary, nrm,
                           degenerate_area)
            for f in range(ncf):
                if not _inside(bary[f], lo, h, dims):
                    stats[4] = f
                    return COLLIDER_DOMAIN, n_active
            n, _ = rasterize(bary, cvel, nrm, lo, h, dims, slot, sw, sv, sn, nodes)
            finalize_collider(n, sw[:n], sv[:n], sn[:n], sticky[:n], normal_eps)
            project(nodes[:n], sw[:n], sv[:n], sn[:n], sticky[:n], gm, gv, friction, proj_tol)
            if n > stats[1]:
                stats[1] = n
        g2p(x, v, C, nv, lo, h, dims, dt, gv)
        for i in range(pinned.shape[0]):
            q = pinned[i]
            for a in range(3):
                x[q, a] = pinned_x[i, a]
                v[q, a] = 0.0
                for b in range(3):
                    C[q, a, b] = 0.0
        col = update_frames(x, v, C, faces, nv, dt, d, D_inv, cloth_friction, gamma, kappa,
                            collapse_eps)
        if col:
            stats[3] += col
            if strict:
                return COLLAPSE, n_active
        stats[0] += 1
    return OK, n_active

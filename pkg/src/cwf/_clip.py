"""Compiled kernels for restricted Voronoi clipping.

Polygons are stored flat: ``starts[p]:starts[p+1]`` indexes rows of ``verts``
and ``labels``. ``labels[k]`` tags the edge leaving vertex k: ``>= 0`` is the
site on the other side of a bisector, ``-1, -2, -3`` are the source triangle's
edges (corner 0->1, 1->2, 2->0).
"""

from __future__ import annotations

import numpy as np
from numba import njit

MAXV = 64


@njit(cache=True)
def _clip(P, L, m, si, sj, i, j, outP, outL):
    """Keep the part of polygon (P, L)[:m] closer to site i than to site j."""
    dx = sj[0] - si[0]
    dy = sj[1] - si[1]
    dz = sj[2] - si[2]
    if dx * dx + dy * dy + dz * dz == 0.0:
        # coincident sites: the lower index owns the shared region
        if i < j:
            for k in range(m):
                outP[k, 0] = P[k, 0]
                outP[k, 1] = P[k, 1]
                outP[k, 2] = P[k, 2]
                outL[k] = L[k]
            return m
        return 0
    mx = 0.5 * (si[0] + sj[0])
    my = 0.5 * (si[1] + sj[1])
    mz = 0.5 * (si[2] + sj[2])
    d = np.empty(m)
    inside = 0
    for k in range(m):
        d[k] = (P[k, 0] - mx) * dx + (P[k, 1] - my) * dy + (P[k, 2] - mz) * dz
        if d[k] <= 0.0:
            inside += 1
    if inside == m:
        for k in range(m):
            outP[k, 0] = P[k, 0]
            outP[k, 1] = P[k, 1]
            outP[k, 2] = P[k, 2]
            outL[k] = L[k]
        return m
    if inside == 0:
        return 0
    n = 0
    for k in range(m):
        k1 = k + 1 if k + 1 < m else 0
        da = d[k]
        db = d[k1]
        if da <= 0.0:
            outP[n, 0] = P[k, 0]
            outP[n, 1] = P[k, 1]
            outP[n, 2] = P[k, 2]
            outL[n] = L[k]
            n += 1
            if db > 0.0:
                t = da / (da - db)
                outP[n, 0] = P[k, 0] + t * (P[k1, 0] - P[k, 0])
                outP[n, 1] = P[k, 1] + t * (P[k1, 1] - P[k, 1])
                outP[n, 2] = P[k, 2] + t * (P[k1, 2] - P[k, 2])
                outL[n] = j
                n += 1
        elif db <= 0.0:
            t = da / (da - db)
            outP[n, 0] = P[k, 0] + t * (P[k1, 0] - P[k, 0])
            outP[n, 1] = P[k, 1] + t * (P[k1, 1] - P[k, 1])
            outP[n, 2] = P[k, 2] + t * (P[k1, 2] - P[k, 2])
            outL[n] = L[k]
            n += 1
        if n >= MAXV - 2:
            break
    return _dedup(outP, outL, n)


@njit(cache=True)
def _dedup(P, L, m):
    """Drop vertices whose outgoing edge has (numerically) zero length."""
    if m < 3:
        return m
    scale = 0.0
    for k in range(m):
        for c in range(3):
            a = abs(P[k, c])
            if a > scale:
                scale = a
    tol = (1e-14 * (scale + 1e-300)) ** 2
    n = 0
    for k in range(m):
        k1 = k + 1 if k + 1 < m else 0
        ex = P[k1, 0] - P[k, 0]
        ey = P[k1, 1] - P[k, 1]
        ez = P[k1, 2] - P[k, 2]
        if ex * ex + ey * ey + ez * ez <= tol and m - (k - n) > 3:
            continue
        P[n, 0] = P[k, 0]
        P[n, 1] = P[k, 1]
        P[n, 2] = P[k, 2]
        L[n] = L[k]
        n += 1
    return n


@njit(cache=True)
def _area(P, m):
    ax = 0.0
    ay = 0.0
    az = 0.0
    for k in range(1, m - 1):
        ux = P[k, 0] - P[0, 0]
        uy = P[k, 1] - P[0, 1]
        uz = P[k, 2] - P[0, 2]
        vx = P[k + 1, 0] - P[0, 0]
        vy = P[k + 1, 1] - P[0, 1]
        vz = P[k + 1, 2] - P[0, 2]
        ax += uy * vz - uz * vy
        ay += uz * vx - ux * vz
        az += ux * vy - uy * vx
    return 0.5 * np.sqrt(ax * ax + ay * ay + az * az)


@njit(cache=True)
def _radius2(P, m, s):
    r = 0.0
    for k in range(m):
        dx = P[k, 0] - s[0]
        dy = P[k, 1] - s[1]
        dz = P[k, 2] - s[2]
        q = dx * dx + dy * dy + dz * dz
        if q > r:
            r = q
    return r


@njit(cache=True)
def _dist2(a, b):
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    dz = a[2] - b[2]
    return dx * dx + dy * dy + dz * dz


@njit(cache=True)
def _grow_f(a, n):
    b = np.empty((max(2 * a.shape[0], n), a.shape[1]))
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _grow_i(a, n):
    b = np.empty(max(2 * a.shape[0], n), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _clip_cell(P, L, m, S, i, knn, bufP, bufL):
    """Clip polygon (P, L)[:m] to the Voronoi cell of site i (in place, returns size)."""
    ns = S.shape[0]
    k = knn.shape[1]
    si = S[i]
    secure = False
    for t in range(k):
        j = knn[i, t]
        if j < 0:
            break
        r2 = _radius2(P, m, si)
        if _dist2(S[j], si) > 4.0 * r2:
            secure = True
            break
        m2 = _clip(P, L, m, si, S[j], i, j, bufP, bufL)
        for q in range(m2):
            P[q, 0] = bufP[q, 0]
            P[q, 1] = bufP[q, 1]
            P[q, 2] = bufP[q, 2]
            L[q] = bufL[q]
        m = m2
        if m < 3:
            return 0
    if not secure and k < ns - 1:
        # neighbour list exhausted before the security radius was reached
        d = np.empty(ns)
        for j in range(ns):
            d[j] = _dist2(S[j], si)
        order = np.argsort(d, kind="mergesort")
        for t in range(ns):
            j = order[t]
            if j == i:
                continue
            r2 = _radius2(P, m, si)
            if d[j] > 4.0 * r2:
                break
            m2 = _clip(P, L, m, si, S[j], i, j, bufP, bufL)
            for q in range(m2):
                P[q, 0] = bufP[q, 0]
                P[q, 1] = bufP[q, 1]
                P[q, 2] = bufP[q, 2]
                L[q] = bufL[q]
            m = m2
            if m < 3:
                return 0
    return m


@njit(cache=True)
def restricted_voronoi(V, F, face_ok, S, knn, seed):
    """Clip every base triangle against the Voronoi cells of sites ``S``.

    Cells meeting a triangle are discovered by walking bisector labels from the
    seed site (nearest to the triangle centroid).
    """
    nf = F.shape[0]
    ns = S.shape[0]
    cap_p = nf * 4 + 16
    cap_v = cap_p * 6
    owner = np.empty(cap_p, dtype=np.int64)
    face = np.empty(cap_p, dtype=np.int64)
    starts = np.zeros(cap_p + 1, dtype=np.int64)
    verts = np.empty((cap_v, 3))
    labels = np.empty(cap_v, dtype=np.int64)
    np_out = 0
    nv_out = 0

    stamp = -np.ones(ns, dtype=np.int64)
    queue = np.empty(ns, dtype=np.int64)
    P = np.empty((MAXV, 3))
    L = np.empty(MAXV, dtype=np.int64)
    bufP = np.empty((MAXV, 3))
    bufL = np.empty(MAXV, dtype=np.int64)

    for f in range(nf):
        if not face_ok[f]:
            continue
        a = V[F[f, 0]]
        b = V[F[f, 1]]
        c = V[F[f, 2]]
        ux = b[0] - a[0]
        uy = b[1] - a[1]
        uz = b[2] - a[2]
        vx = c[0] - a[0]
        vy = c[1] - a[1]
        vz = c[2] - a[2]
        cx = uy * vz - uz * vy
        cy = uz * vx - ux * vz
        cz = ux * vy - uy * vx
        fa = 0.5 * np.sqrt(cx * cx + cy * cy + cz * cz)
        min_area = fa * 1e-14

        head = 0
        tail = 0
        s0 = seed[f]
        queue[tail] = s0
        tail += 1
        stamp[s0] = f
        while head < tail:
            i = queue[head]
            head += 1
            for q in range(3):
                P[0, q] = a[q]
                P[1, q] = b[q]
                P[2, q] = c[q]
            L[0] = -1
            L[1] = -2
            L[2] = -3
            m = _clip_cell(P, L, 3, S, i, knn, bufP, bufL)
            if m < 3:
                continue
            if _area(P, m) <= min_area:
                continue
            if np_out + 1 >= owner.shape[0]:
                owner = _grow_i(owner, np_out + 2)
                face = _grow_i(face, np_out + 2)
                starts = _grow_i(starts, np_out + 3)
            if nv_out + m >= verts.shape[0]:
                verts = _grow_f(verts, nv_out + m + 1)
                labels = _grow_i(labels, nv_out + m + 1)
            owner[np_out] = i
            face[np_out] = f
            starts[np_out] = nv_out
            for q in range(m):
                verts[nv_out + q, 0] = P[q, 0]
                verts[nv_out + q, 1] = P[q, 1]
                verts[nv_out + q, 2] = P[q, 2]
                labels[nv_out + q] = L[q]
                lj = L[q]
                if lj >= 0 and stamp[lj] != f:
                    stamp[lj] = f
                    queue[tail] = lj
                    tail += 1
            nv_out += m
            np_out += 1
    starts[np_out] = nv_out
    return (owner[:np_out].copy(), face[:np_out].copy(), starts[: np_out + 1].copy(),
            verts[:nv_out].copy(), labels[:nv_out].copy())


@njit(cache=True)
def partition_polygons(starts, verts, labels, cand_starts, cands, S):
    """Split each polygon among its candidate sites by nearest-candidate rule.

    Returns flat pieces plus, per piece, the owning candidate and source polygon.
    """
    npoly = starts.shape[0] - 1
    cap = npoly * 4 + 4
    owner = np.empty(cap, dtype=np.int64)
    src = np.empty(cap, dtype=np.int64)
    pstarts = np.zeros(cap + 1, dtype=np.int64)
    pverts = np.empty((cap * 6, 3))
    plabels = np.empty(cap * 6, dtype=np.int64)
    n_out = 0
    nv = 0
    P = np.empty((MAXV, 3))
    L = np.empty(MAXV, dtype=np.int64)
    bufP = np.empty((MAXV, 3))
    bufL = np.empty(MAXV, dtype=np.int64)
    for p in range(npoly):
        s = starts[p]
        e = starts[p + 1]
        area0 = 0.0
        for q in range(e - s):
            P[q] = verts[s + q]
        area0 = _area(P, e - s)
        for ci in range(cand_starts[p], cand_starts[p + 1]):
            i = cands[ci]
            m = e - s
            for q in range(m):
                P[q, 0] = verts[s + q, 0]
                P[q, 1] = verts[s + q, 1]
                P[q, 2] = verts[s + q, 2]
                L[q] = labels[s + q]
            for cj in range(cand_starts[p], cand_starts[p + 1]):
                j = cands[cj]
                if j == i:
                    continue
                m2 = _clip(P, L, m, S[i], S[j], i, j, bufP, bufL)
                for q in range(m2):
                    P[q, 0] = bufP[q, 0]
                    P[q, 1] = bufP[q, 1]
                    P[q, 2] = bufP[q, 2]
                    L[q] = bufL[q]
                m = m2
                if m < 3:
                    break
            if m < 3 or _area(P, m) <= area0 * 1e-14:
                continue
            if n_out + 1 >= owner.shape[0]:
                owner = _grow_i(owner, n_out + 2)
                src = _grow_i(src, n_out + 2)
                pstarts = _grow_i(pstarts, n_out + 3)
            if nv + m >= pverts.shape[0]:
                pverts = _grow_f(pverts, nv + m + 1)
                plabels = _grow_i(plabels, nv + m + 1)
            owner[n_out] = i
            src[n_out] = p
            pstarts[n_out] = nv
            for q in range(m):
                pverts[nv + q, 0] = P[q, 0]
                pverts[nv + q, 1] = P[q, 1]
                pverts[nv + q, 2] = P[q, 2]
                plabels[nv + q] = L[q]
            nv += m
            n_out += 1
    pstarts[n_out] = nv
    return (owner[:n_out].copy(), src[:n_out].copy(), pstarts[: n_out + 1].copy(),
            pverts[:nv].copy(), plabels[:nv].copy())

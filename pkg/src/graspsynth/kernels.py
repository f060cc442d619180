"""Hot numeric kernels: nearest-point distances, ray/triangle tests, BVH traversal.

Every kernel has a numba implementation (``*_nb``) and a pure-numpy one
(``*_np``). The public names dispatch on :data:`graspsynth._accel.USE_NUMBA`.
Both paths evaluate the same floating-point expressions in the same order, so
their results agree bit for bit.
"""
import numpy as np

from graspsynth._accel import USE_NUMBA, njit

# minimum accepted ray parameter; rejects self-hits at the ray origin
T_EPS = 1e-12
_CHUNK = 1 << 20  # max pair count materialised at once by the numpy paths


def _ray_tri_formula(ox, oy, oz, dx, dy, dz, ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z):
    """Moller-Trumbore; works elementwise on arrays and on scalars.

    Returns ``(t, hit)``. ``t`` is in units of the (unnormalised) direction.
    """
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    inv = 1.0 / det
    sx = ox - ax
    sy = oy - ay
    sz = oz - az
    u = (sx * px + sy * py + sz * pz) * inv
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    hit = (det != 0.0) & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > T_EPS)
    return t, hit


_ray_tri_nb = njit(_ray_tri_formula)


# ---------------------------------------------------------------------------
# nearest-point distances


@njit
def nearest_distances_nb(queries, points):
    n = queries.shape[0]
    m = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        best = np.inf
        qx = queries[i, 0]
        qy = queries[i, 1]
        qz = queries[i, 2]
        for j in range(m):
            dx = qx - points[j, 0]
            dy = qy - points[j, 1]
            dz = qz - points[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
        out[i] = np.sqrt(best)
    return out


def nearest_distances_np(queries, points):
    n, m = len(queries), len(points)
    out = np.empty(n)
    step = max(1, _CHUNK // max(m, 1))
    for s in range(0, n, step):
        d = queries[s : s + step, None, :] - points[None, :, :]
        d2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
        out[s : s + step] = np.sqrt(d2.min(axis=1))
    return out


def nearest_distances(queries, points):
    """For each query point, the Euclidean distance to the closest of ``points``."""
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(q) == 0 or len(p) == 0:
        raise ValueError("nearest_distances needs non-empty point sets")
    if USE_NUMBA:
        return nearest_distances_nb(q, p)
    return nearest_distances_np(q, p)


# ---------------------------------------------------------------------------
# brute-force ray casting (also the oracle for BVH traversal)


def trace_brute_np(origins, dirs, v0, e1, e2, tri_object, active):
    """Closest hit of every ray against every active triangle.

    Ties on ``t`` resolve to the lowest triangle id. Returns ``(t, tri)`` with
    ``t = inf`` and ``tri = -1`` for misses.
    """
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_g = np.full(n, -1, dtype=np.int64)
    keep = np.nonzero(active[tri_object])[0]
    if len(keep) == 0 or n == 0:
        return best_t, best_g
    a, b, c = v0[keep], e1[keep], e2[keep]
    step = max(1, _CHUNK // len(keep))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for s in range(0, n, step):
            o = origins[s : s + step, :, None]
            d = dirs[s : s + step, :, None]
            t, hit = _ray_tri_formula(
                o[:, 0], o[:, 1], o[:, 2], d[:, 0], d[:, 1], d[:, 2],
                a[:, 0], a[:, 1], a[:, 2], b[:, 0], b[:, 1], b[:, 2], c[:, 0], c[:, 1], c[:, 2],
            )
            t = np.where(hit, t, np.inf)
            k = np.argmin(t, axis=1)  # first minimum == lowest triangle id
            tk = t[np.arange(len(k)), k]
            found = np.isfinite(tk)
            best_t[s : s + step] = tk
            best_g[s : s + step] = np.where(found, keep[k], -1)
    return best_t, best_g


@njit
def count_crossings_nb(points, direction, v0, e1, e2):
    n = points.shape[0]
    out = np.zeros(n, dtype=np.int64)
    dx = direction[0]
    dy = direction[1]
    dz = direction[2]
    for i in range(n):
        c = 0
        for k in range(v0.shape[0]):
            t, hit = _ray_tri_nb(
                points[i, 0], points[i, 1], points[i, 2], dx, dy, dz,
                v0[k, 0], v0[k, 1], v0[k, 2], e1[k, 0], e1[k, 1], e1[k, 2], e2[k, 0], e2[k, 1], e2[k, 2],
            )
            if hit:
                c += 1
        out[i] = c
    return out


def count_crossings_np(points, direction, v0, e1, e2):
    n = len(points)
    out = np.zeros(n, dtype=np.int64)
    step = max(1, _CHUNK // max(len(v0), 1))
    d = direction
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for s in range(0, n, step):
            p = points[s : s + step, :, None]
            _, hit = _ray_tri_formula(
                p[:, 0], p[:, 1], p[:, 2], d[0], d[1], d[2],
                v0[:, 0], v0[:, 1], v0[:, 2], e1[:, 0], e1[:, 1], e1[:, 2], e2[:, 0], e2[:, 1], e2[:, 2],
            )
            out[s : s + step] = hit.sum(axis=1)
    return out


def count_crossings(points, direction, v0, e1, e2):
    """Number of triangles crossed by the ray ``p + t*direction, t > 0`` for each point."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    direction = np.asarray(direction, dtype=np.float64)
    if USE_NUMBA:
        return count_crossings_nb(points, direction, v0, e1, e2)
    return count_crossings_np(points, direction, v0, e1, e2)


# ---------------------------------------------------------------------------
# BVH traversal


@njit
def _box_entry(ox, oy, oz, dx, dy, dz, lo, hi, tfar):
    """Slab test against [lo, hi] restricted to [0, tfar]; returns entry t or -1."""
    tnear = 0.0
    for a in range(3):
        if a == 0:
            o = ox
            d = dx
        elif a == 1:
            o = oy
            d = dy
        else:
            o = oz
            d = dz
        if d == 0.0:
            if o < lo[a] or o > hi[a]:
                return -1.0
            continue
        inv = 1.0 / d
        t1 = (lo[a] - o) * inv
        t2 = (hi[a] - o) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tnear:
            tnear = t1
        if t2 < tfar:
            tfar = t2
        if tnear > tfar:
            return -1.0
    return tnear


@njit
def trace_bvh_nb(origins, dirs, node_lo, node_hi, node_left, node_right, node_axis,
                 node_start, node_count, tri_index, v0, e1, e2, tri_object, active):
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_g = np.full(n, -1, dtype=np.int64)
    stack = np.empty(128, dtype=np.int64)
    for r in range(n):
        ox = origins[r, 0]
        oy = origins[r, 1]
        oz = origins[r, 2]
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        bt = np.inf
        bg = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_entry(ox, oy, oz, dx, dy, dz, node_lo[node], node_hi[node], bt) < 0.0:
                continue
            if node_left[node] < 0:
                for k in range(node_start[node], node_start[node] + node_count[node]):
                    g = tri_index[k]
                    if not active[tri_object[g]]:
                        continue
                    t, hit = _ray_tri_nb(
                        ox, oy, oz, dx, dy, dz,
                        v0[g, 0], v0[g, 1], v0[g, 2], e1[g, 0], e1[g, 1], e1[g, 2],
                        e2[g, 0], e2[g, 1], e2[g, 2],
                    )
                    if hit and (t < bt or (t == bt and g < bg)):
                        bt = t
                        bg = g
            else:
                ax = node_axis[node]
                d = dx if ax == 0 else (dy if ax == 1 else dz)
                # near child goes on top of the stack
                if d >= 0.0:
                    stack[sp] = node_right[node]
                    stack[sp + 1] = node_left[node]
                else:
                    stack[sp] = node_left[node]
                    stack[sp + 1] = node_right[node]
                sp += 2
        best_t[r] = bt
        best_g[r] = bg
    return best_t, best_g


def _box_entry_np(o, d, lo, hi, tfar):
    tnear = np.zeros(len(o))
    tfar = tfar.copy()
    ok = np.ones(len(o), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in range(3):
            da = d[:, a]
            oa = o[:, a]
            flat = da == 0.0
            ok &= ~(flat & ((oa < lo[a]) | (oa > hi[a])))
            inv = 1.0 / da
            t1 = (lo[a] - oa) * inv
            t2 = (hi[a] - oa) * inv
            t1, t2 = np.minimum(t1, t2), np.maximum(t1, t2)
            tnear = np.where(flat, tnear, np.maximum(tnear, t1))
            tfar = np.where(flat, tfar, np.minimum(tfar, t2))
    return ok & (tnear <= tfar)


def trace_bvh_np(origins, dirs, node_lo, node_hi, node_left, node_right, node_axis,
                 node_start, node_count, tri_index, v0, e1, e2, tri_object, active):
    """Packet traversal: each node is visited once with the subset of rays reaching it."""
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_g = np.full(n, -1, dtype=np.int64)
    stack = [(0, np.arange(n))]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        while stack:
            node, idx = stack.pop()
            o = origins[idx]
            d = dirs[idx]
            keep = _box_entry_np(o, d, node_lo[node], node_hi[node], best_t[idx])
            if not keep.any():
                continue
            idx = idx[keep]
            if node_left[node] >= 0:
                stack.append((node_right[node], idx))
                stack.append((node_left[node], idx))
                continue
            o = origins[idx]
            d = dirs[idx]
            for k in range(node_start[node], node_start[node] + node_count[node]):
                g = tri_index[k]
                if not active[tri_object[g]]:
                    continue
                t, hit = _ray_tri_formula(
                    o[:, 0], o[:, 1], o[:, 2], d[:, 0], d[:, 1], d[:, 2],
                    v0[g, 0], v0[g, 1], v0[g, 2], e1[g, 0], e1[g, 1], e1[g, 2], e2[g, 0], e2[g, 1], e2[g, 2],
                )
                bt = best_t[idx]
                better = hit & ((t < bt) | ((t == bt) & (g < best_g[idx])))
                upd = idx[better]
                best_t[upd] = t[better]
                best_g[upd] = g
    return best_t, best_g


def trace_bvh(origins, dirs, arrays, active):
    """Closest active-triangle hit per ray; see :func:`trace_bvh_nb` for the array layout."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    active = np.ascontiguousarray(active, dtype=np.bool_)
    fn = trace_bvh_nb if USE_NUMBA else trace_bvh_np
    return fn(origins, dirs, *arrays, active)

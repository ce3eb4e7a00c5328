"""Hot numeric kernels: trilinear sampling, RK4 tracing, batch distance matrices.

Each kernel has a numba ``@njit`` build and a pure-numpy build with identical
semantics.  Numba is used when importable unless the ``FLOWQUERY_NO_NUMBA``
environment variable is set to a non-empty value; ``USING_NUMBA`` records the
active path.  Both builds stay importable (``*_numpy`` / ``*_numba``) so tests
and ``benchmarks/bench_kernels.py`` can compare them directly.

Grid convention: vectors are stored x-fastest in a ``(nx*ny*nz, 3)`` float64
array; node ``(i, j, k)`` lives at flat index ``i + nx*(j + ny*k)``.
"""

from __future__ import annotations

import os

import numpy as np

USING_NUMBA = False
if not os.environ.get("FLOWQUERY_NO_NUMBA"):
    try:
        from numba import njit as _njit

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dep, flag is the off-switch
        pass

# Streamline termination codes shared with trace.py.
TERM_DOMAIN_EXIT = 0
TERM_MAX_STEPS = 1
TERM_STAGNATION = 2


# ---------------------------------------------------------------------------
# pure-numpy builds
# ---------------------------------------------------------------------------

def trilinear_many_numpy(data, nx, ny, nz, bmin, bmax, pts):
    """Trilinear interpolation of `data` at `pts` (M,3). Points must be in bounds."""
    pts = np.atleast_2d(pts)
    span = bmax - bmin
    u = (pts - bmin) / span * (np.array([nx, ny, nz], dtype=np.float64) - 1.0)
    i0 = np.floor(u).astype(np.int64)
    np.clip(i0, 0, np.array([nx - 2, ny - 2, nz - 2]), out=i0)
    f = u - i0
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]

    def node(dx, dy, dz):
        return data[(ix + dx) + nx * ((iy + dy) + ny * (iz + dz))]

    out = (1 - fx) * (1 - fy) * (1 - fz) * node(0, 0, 0)
    out += fx * (1 - fy) * (1 - fz) * node(1, 0, 0)
    out += (1 - fx) * fy * (1 - fz) * node(0, 1, 0)
    out += fx * fy * (1 - fz) * node(1, 1, 0)
    out += (1 - fx) * (1 - fy) * fz * node(0, 0, 1)
    out += fx * (1 - fy) * fz * node(1, 0, 1)
    out += (1 - fx) * fy * fz * node(0, 1, 1)
    out += fx * fy * fz * node(1, 1, 1)
    return out


def trace_rk4_numpy(data, nx, ny, nz, bmin, bmax, seed, step, max_steps,
                    min_speed, sign):
    """Fixed-step RK4 on raw velocity. Returns (points, count, termination)."""
    pts = np.empty((max_steps + 1, 3), dtype=np.float64)
    p = np.asarray(seed, dtype=np.float64).copy()
    pts[0] = p
    count = 1
    term = TERM_MAX_STEPS

    def inside(q):
        return bool(np.all(q >= bmin) and np.all(q <= bmax))

    def vel(q):
        return sign * trilinear_many_numpy(data, nx, ny, nz, bmin, bmax, q[None, :])[0]

    for _ in range(max_steps):
        k1 = vel(p)
        if k1[0] * k1[0] + k1[1] * k1[1] + k1[2] * k1[2] < min_speed * min_speed:
            term = TERM_STAGNATION
            break
        q = p + 0.5 * step * k1
        if not inside(q):
            term = TERM_DOMAIN_EXIT
            break
        k2 = vel(q)
        q = p + 0.5 * step * k2
        if not inside(q):
            term = TERM_DOMAIN_EXIT
            break
        k3 = vel(q)
        q = p + step * k3
        if not inside(q):
            term = TERM_DOMAIN_EXIT
            break
        k4 = vel(q)
        nxt = p + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not inside(nxt):
            term = TERM_DOMAIN_EXIT
            break
        p = nxt
        pts[count] = p
        count += 1
    return pts[:count], count, term


def distance_matrices_numpy(points, arcs):
    """Pairwise-distance matrices for a batch of polylines, scaled by 1/arc.

    points: (B, n, 3) float64; arcs: (B,) float64 positive. Returns (B, n, n).
    """
    diff = points[:, :, None, :] - points[:, None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    d /= arcs[:, None, None]
    return d


# ---------------------------------------------------------------------------
# numba builds
# ---------------------------------------------------------------------------

if USING_NUMBA:
    _jit = _njit(cache=True, nogil=True)

    @_jit
    def _trilinear_one(data, nx, ny, nz, bmin, bmax, x, y, z, out):
        ux = (x - bmin[0]) / (bmax[0] - bmin[0]) * (nx - 1.0)
        uy = (y - bmin[1]) / (bmax[1] - bmin[1]) * (ny - 1.0)
        uz = (z - bmin[2]) / (bmax[2] - bmin[2]) * (nz - 1.0)
        ix = int(np.floor(ux))
        iy = int(np.floor(uy))
        iz = int(np.floor(uz))
        if ix > nx - 2:
            ix = nx - 2
        if ix < 0:
            ix = 0
        if iy > ny - 2:
            iy = ny - 2
        if iy < 0:
            iy = 0
        if iz > nz - 2:
            iz = nz - 2
        if iz < 0:
            iz = 0
        fx = ux - ix
        fy = uy - iy
        fz = uz - iz
        for c in range(3):
            v = (1 - fx) * (1 - fy) * (1 - fz) * data[ix + nx * (iy + ny * iz), c]
            v += fx * (1 - fy) * (1 - fz) * data[(ix + 1) + nx * (iy + ny * iz), c]
            v += (1 - fx) * fy * (1 - fz) * data[ix + nx * ((iy + 1) + ny * iz), c]
            v += fx * fy * (1 - fz) * data[(ix + 1) + nx * ((iy + 1) + ny * iz), c]
            v += (1 - fx) * (1 - fy) * fz * data[ix + nx * (iy + ny * (iz + 1)), c]
            v += fx * (1 - fy) * fz * data[(ix + 1) + nx * (iy + ny * (iz + 1)), c]
            v += (1 - fx) * fy * fz * data[ix + nx * ((iy + 1) + ny * (iz + 1)), c]
            v += fx * fy * fz * data[(ix + 1) + nx * ((iy + 1) + ny * (iz + 1)), c]
            out[c] = v

    @_jit
    def trilinear_many_numba(data, nx, ny, nz, bmin, bmax, pts):
        m = pts.shape[0]
        out = np.empty((m, 3), dtype=np.float64)
        for r in range(m):
            _trilinear_one(data, nx, ny, nz, bmin, bmax,
                           pts[r, 0], pts[r, 1], pts[r, 2], out[r])
        return out

    @_jit
    def trace_rk4_numba(data, nx, ny, nz, bmin, bmax, seed, step, max_steps,
                        min_speed, sign):
        pts = np.empty((max_steps + 1, 3), dtype=np.float64)
        p = seed.copy()
        pts[0] = p
        count = 1
        term = TERM_MAX_STEPS
        k = np.empty((4, 3), dtype=np.float64)
        q = np.empty(3, dtype=np.float64)
        for _ in range(max_steps):
            _trilinear_one(data, nx, ny, nz, bmin, bmax, p[0], p[1], p[2], k[0])
            for c in range(3):
                k[0, c] *= sign
            speed2 = k[0, 0] * k[0, 0] + k[0, 1] * k[0, 1] + k[0, 2] * k[0, 2]
            if speed2 < min_speed * min_speed:
                term = TERM_STAGNATION
                break
            exited = False
            for stage in range(3):
                h = 0.5 * step if stage < 2 else step
                for c in range(3):
                    q[c] = p[c] + h * k[stage, c]
                if (q[0] < bmin[0] or q[0] > bmax[0] or q[1] < bmin[1]
                        or q[1] > bmax[1] or q[2] < bmin[2] or q[2] > bmax[2]):
                    exited = True
                    break
                _trilinear_one(data, nx, ny, nz, bmin, bmax, q[0], q[1], q[2],
                               k[stage + 1])
                for c in range(3):
                    k[stage + 1, c] *= sign
            if exited:
                term = TERM_DOMAIN_EXIT
                break
            for c in range(3):
                q[c] = p[c] + (step / 6.0) * (k[0, c] + 2.0 * k[1, c]
                                              + 2.0 * k[2, c] + k[3, c])
            if (q[0] < bmin[0] or q[0] > bmax[0] or q[1] < bmin[1]
                    or q[1] > bmax[1] or q[2] < bmin[2] or q[2] > bmax[2]):
                term = TERM_DOMAIN_EXIT
                break
            for c in range(3):
                p[c] = q[c]
            pts[count] = p
            count += 1
        return pts[:count], count, term

    @_jit
    def distance_matrices_numba(points, arcs):
        nb, n = points.shape[0], points.shape[1]
        out = np.empty((nb, n, n), dtype=np.float64)
        for b in range(nb):
            inv = 1.0 / arcs[b]
            for i in range(n):
                out[b, i, i] = 0.0
                for j in range(i + 1, n):
                    dx = points[b, i, 0] - points[b, j, 0]
                    dy = points[b, i, 1] - points[b, j, 1]
                    dz = points[b, i, 2] - points[b, j, 2]
                    d = np.sqrt(dx * dx + dy * dy + dz * dz) * inv
                    out[b, i, j] = d
                    out[b, j, i] = d
        return out

    trilinear_many = trilinear_many_numba
    trace_rk4 = trace_rk4_numba
    distance_matrices = distance_matrices_numba
else:
    trilinear_many_numba = None
    trace_rk4_numba = None
    distance_matrices_numba = None

    trilinear_many = trilinear_many_numpy
    trace_rk4 = trace_rk4_numpy
    distance_matrices = distance_matrices_numpy

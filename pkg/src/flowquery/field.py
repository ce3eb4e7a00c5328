"""Vector-field data model: regular grids, trilinear sampling, synthetic
generators, and the ``.meta``/``.vec`` file pair.

Grids store one 3-component velocity per node, x-fastest, as float64.
Generated fields are quantized through float32 so that the f32 on-disk
format round-trips bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import BadParam, FormatError, IoError, OutOfDomain

KINDS = ("uniform", "rotor", "helix", "critical_points", "two_swirls")


@dataclass(frozen=True)
class CriticalPointSpec:
    """Local linearization blended into a composite field around `position`."""

    position: np.ndarray
    jacobian: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "jacobian", np.asarray(self.jacobian, dtype=np.float64))
        if self.position.shape != (3,) or self.jacobian.shape != (3, 3):
            raise BadParam("critical point needs a 3-vector position and 3x3 jacobian")
        if not np.isfinite(self.jacobian).all() or not np.isfinite(self.position).all():
            raise BadParam("critical point spec must be finite")
        if not self.radius > 0:
            raise BadParam("critical point radius must be > 0")


class VectorField:
    """Immutable regular grid of velocity vectors with physical bounds.

    data is ``(nx*ny*nz, 3)`` float64, x-fastest: node (i,j,k) at flat
    index ``i + nx*(j + ny*k)``.
    """

    def __init__(self, dims, bounds, data):
        nx, ny, nz = (int(d) for d in dims)
        if min(nx, ny, nz) < 2:
            raise BadParam("dims must be >= 2 per axis")
        bmin = np.asarray(bounds[0], dtype=np.float64)
        bmax = np.asarray(bounds[1], dtype=np.float64)
        if bmin.shape != (3,) or bmax.shape != (3,):
            raise BadParam("bounds must be two 3-vectors")
        if not np.all(bmin < bmax):
            raise BadParam("bounds min must be < max per axis")
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64).reshape(-1, 3))
        if arr.shape[0] != nx * ny * nz:
            raise BadParam(f"data length {arr.shape[0]} != nx*ny*nz = {nx * ny * nz}")
        if not np.isfinite(arr).all():
            raise BadParam("field data must be finite")
        self.dims = (nx, ny, nz)
        self.bounds_min = bmin
        self.bounds_max = bmax
        self.data = arr
        for a in (self.bounds_min, self.bounds_max, self.data):
            a.setflags(write=False)

    @property
    def bounds(self):
        return self.bounds_min, self.bounds_max

    def axis_coords(self, axis):
        return np.linspace(self.bounds_min[axis], self.bounds_max[axis],
                           self.dims[axis])

    def contains(self, p):
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.bounds_min) and np.all(p <= self.bounds_max))

    def __repr__(self):
        return f"VectorField(dims={self.dims}, bounds={tuple(self.bounds_min)}..{tuple(self.bounds_max)})"


def interpolate(field: VectorField, p) -> np.ndarray:
    """Trilinear interpolation at a single point; exact at grid nodes."""
    p = np.asarray(p, dtype=np.float64)
    if not field.contains(p):
        raise OutOfDomain(f"point {p.tolist()} outside field bounds")
    nx, ny, nz = field.dims
    return _kernels.trilinear_many(field.data, nx, ny, nz, field.bounds_min,
                                   field.bounds_max, p.reshape(1, 3))[0]


def interpolate_many(field: VectorField, pts) -> np.ndarray:
    """Vectorized trilinear interpolation at (M,3) points inside bounds."""
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(pts, dtype=np.float64)))
    inside = np.all(pts >= field.bounds_min, axis=1) & np.all(pts <= field.bounds_max, axis=1)
    if not inside.all():
        bad = pts[~inside][0]
        raise OutOfDomain(f"point {bad.tolist()} outside field bounds")
    nx, ny, nz = field.dims
    return _kernels.trilinear_many(field.data, nx, ny, nz, field.bounds_min,
                                   field.bounds_max, pts)


def _grid_points(dims, bmin, bmax):
    nx, ny, nz = dims
    xs = np.linspace(bmin[0], bmax[0], nx)
    ys = np.linspace(bmin[1], bmax[1], ny)
    zs = np.linspace(bmin[2], bmax[2], nz)
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    return np.stack([X, Y, Z], axis=-1).reshape(-1, 3)


def _random_specs(count, bmin, bmax, rng):
    span = bmax - bmin
    specs = []
    for _ in range(count):
        pos = bmin + span * (0.15 + 0.7 * rng.random(3))
        jac = rng.standard_normal((3, 3))
        jac /= max(np.linalg.norm(jac, 2), 1e-9)
        jac *= 1.0 + rng.random()
        radius = float(span.min()) * (0.1 + 0.15 * rng.random())
        specs.append(CriticalPointSpec(pos, jac, radius))
    return specs


def eval_critical_points(pts, specs):
    """Sum of Gaussian-weighted local linearizations: sum_k w_k J_k (p - p_k)."""
    v = np.zeros_like(pts)
    for s in specs:
        d = pts - s.position
        w = np.exp(-(d * d).sum(axis=1) / (s.radius * s.radius))
        v += w[:, None] * (d @ s.jacobian.T)
    return v


def gen_synthetic(kind, dims, bounds, params=None, seed=0) -> VectorField:
    """Deterministic analytic field of the given kind.

    uniform           v = (1, 0, 0)
    rotor             v = (-y, x, 0)
    helix             v = (-y, x, pitch)
    critical_points   Gaussian-blended linearizations from `specs` (or
                      `count` random ones drawn from `seed`)
    two_swirls        two counter-rotating swirl tubes on offset vertical
                      axes; each swirl is a helix field damped by a Gaussian
                      of its axis distance so both stay localized
    """
    params = dict(params or {})
    bmin = np.asarray(bounds[0], dtype=np.float64)
    bmax = np.asarray(bounds[1], dtype=np.float64)
    pts = _grid_points(tuple(int(d) for d in dims), bmin, bmax)

    if kind == "uniform":
        v = np.zeros_like(pts)
        v[:, 0] = 1.0
    elif kind == "rotor":
        v = np.stack([-pts[:, 1], pts[:, 0], np.zeros(len(pts))], axis=1)
    elif kind == "helix":
        pitch = float(params.get("pitch", 0.5))
        if pitch <= 0:
            raise BadParam("helix pitch must be > 0")
        v = np.stack([-pts[:, 1], pts[:, 0], np.full(len(pts), pitch)], axis=1)
    elif kind == "critical_points":
        specs = params.get("specs")
        if specs is None:
            count = int(params.get("count", 5))
            if count < 1:
                raise BadParam("critical_points needs specs or count >= 1")
            specs = _random_specs(count, bmin, bmax, np.random.default_rng(seed))
        v = eval_critical_points(pts, specs)
    elif kind == "two_swirls":
        pitch = float(params.get("pitch", 0.5))
        if pitch <= 0:
            raise BadParam("two_swirls pitch must be > 0")
        span = bmax - bmin
        radius = float(params.get("radius", 0.25 * span[0]))
        if radius <= 0:
            raise BadParam("two_swirls radius must be > 0")
        center = 0.5 * (bmin + bmax)
        off = np.array([0.25 * span[0], 0.0, 0.0])
        axes = params.get("centers", [center - off, center + off])
        v = np.zeros_like(pts)
        for axis_center, spin in zip(axes, (1.0, -1.0)):
            a = np.asarray(axis_center, dtype=np.float64)
            dx = pts[:, 0] - a[0]
            dy = pts[:, 1] - a[1]
            w = np.exp(-(dx * dx + dy * dy) / (radius * radius))
            v[:, 0] += w * (-spin * dy)
            v[:, 1] += w * (spin * dx)
            v[:, 2] += w * pitch
    else:
        raise BadParam(f"unknown field kind {kind!r}")

    # f32 quantization keeps the on-disk format an exact round trip
    v = v.astype(np.float32).astype(np.float64)
    return VectorField(dims, (bmin, bmax), v)


def _base_path(path):
    p = Path(path)
    if p.suffix in (".meta", ".vec"):
        p = p.with_suffix("")
    return p


def save_raw(field: VectorField, path) -> None:
    """Write `<base>.meta` (text header) and `<base>.vec` (f32-LE payload)."""
    base = _base_path(path)
    nx, ny, nz = field.dims
    bmin = " ".join(repr(float(c)) for c in field.bounds_min)
    bmax = " ".join(repr(float(c)) for c in field.bounds_max)
    meta = (
        f"dims {nx} {ny} {nz}\n"
        f"bmin {bmin}\n"
        f"bmax {bmax}\n"
        "components 3\n"
        "scalar float32-le\n"
    )
    try:
        base.with_suffix(".meta").write_text(meta)
        base.with_suffix(".vec").write_bytes(
            np.ascontiguousarray(field.data.astype("<f4")).tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def load_raw(path) -> VectorField:
    """Read a `.meta`/`.vec` pair written by save_raw."""
    base = _base_path(path)
    try:
        meta_text = base.with_suffix(".meta").read_text()
        payload = base.with_suffix(".vec").read_bytes()
    except OSError as e:
        raise IoError(str(e)) from e

    fields = {}
    for line in meta_text.splitlines():
        parts = line.split()
        if parts:
            fields[parts[0]] = parts[1:]
    try:
        dims = tuple(int(x) for x in fields["dims"])
        bmin = [float(x) for x in fields["bmin"]]
        bmax = [float(x) for x in fields["bmax"]]
        components = int(fields["components"][0])
        scalar = fields["scalar"][0]
    except (KeyError, ValueError, IndexError) as e:
        raise FormatError(f"malformed meta sidecar: {e}") from e
    if components != 3 or scalar != "float32-le":
        raise FormatError(f"unsupported payload layout: {components} x {scalar}")

    expected = dims[0] * dims[1] * dims[2] * 3 * 4
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, dims imply {expected}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(-1, 3)
    return VectorField(dims, (bmin, bmax), data)

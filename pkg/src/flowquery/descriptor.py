"""Rigid-invariant segment descriptors.

A streamline is cut into hierarchical overlapping windows, each window is
resampled to 32 control points at uniform arc-length spacing, and the
pairwise point distances divided by the window's arc length form a 32x32
dimensionless matrix.  Chord never exceeds arc, so entries stay in [0, 1];
rotations, translations, reflections, and uniform scalings leave the matrix
unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BadParam, DegenerateSegment, FormatError, IoError
from .trace import Streamline, cumulative_arc

N_CONTROL = 32


@dataclass
class SamplingConfig:
    levels: int = 3
    max_len: float = 4.0
    overlap: float = 0.5
    min_points: int = 4

    def __post_init__(self):
        if self.levels < 1:
            raise BadParam("levels must be >= 1")
        if not self.max_len > 0:
            raise BadParam("max_len must be > 0")
        if not 0 <= self.overlap < 1:
            raise BadParam("overlap must be in [0, 1)")
        if self.min_points < 4:
            raise BadParam("min_points must be >= 4")


@dataclass
class Segment:
    """Contiguous arc-length window of a streamline."""

    streamline_id: int
    level: int
    arc_start: float
    arc_end: float
    points: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if not self.arc_end > self.arc_start:
            raise BadParam("segment needs arc_end > arc_start")

    @property
    def arc_length(self) -> float:
        return self.arc_end - self.arc_start


def _point_at_arc(points, cum, a):
    j = int(np.searchsorted(cum, a, side="right")) - 1
    j = min(max(j, 0), len(points) - 2)
    span = cum[j + 1] - cum[j]
    t = 0.0 if span <= 0 else (a - cum[j]) / span
    return points[j] + t * (points[j + 1] - points[j])


def slice_by_arc(points, cum, a0, a1):
    """Polyline restricted to arc interval [a0, a1], endpoints interpolated."""
    eps = 1e-12 * max(cum[-1], 1.0)
    inner = points[(cum > a0 + eps) & (cum < a1 - eps)]
    return np.vstack([_point_at_arc(points, cum, a0)[None, :], inner,
                      _point_at_arc(points, cum, a1)[None, :]])


def sample_segments(s: Streamline, cfg: SamplingConfig) -> list[Segment]:
    """Hierarchical overlapping windows over one streamline.

    Level k uses window length max_len / 2**k and stride (1-overlap) times
    that; windows covering fewer than min_points raw vertices are dropped.
    Streamlines shorter than a level's window simply skip that level.
    """
    total = s.arc_length
    cum = s.cumulative_arc
    tol = 1e-9 * max(total, 1.0)
    out = []
    for k in range(cfg.levels):
        length = cfg.max_len / (2 ** k)
        stride = (1.0 - cfg.overlap) * length
        if total + tol < length:
            continue
        m = 0
        while m * stride + length <= total + tol:
            a0 = m * stride
            a1 = min(a0 + length, total)
            raw = int(np.count_nonzero((cum >= a0 - tol) & (cum <= a1 + tol)))
            if raw >= cfg.min_points:
                out.append(Segment(
                    streamline_id=s.seed_id, level=k, arc_start=a0, arc_end=a1,
                    points=slice_by_arc(s.points, cum, a0, a1)))
            m += 1
    return out


def resample(seg: Segment, n: int = N_CONTROL) -> np.ndarray:
    """n control points at uniform arc-length parameters along the segment's
    polyline; the original endpoints are kept bit-exactly."""
    pts = seg.points
    cum = cumulative_arc(pts)
    length = cum[-1]
    if not length > 0:
        raise DegenerateSegment("segment arc length is zero")
    out = np.empty((n, 3), dtype=np.float64)
    out[0] = pts[0]
    out[n - 1] = pts[-1]
    targets = np.arange(1, n - 1) * (length / (n - 1))
    js = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(pts) - 2)
    spans = cum[js + 1] - cum[js]
    ts = np.where(spans > 0, (targets - cum[js]) / np.where(spans > 0, spans, 1.0), 0.0)
    out[1:n - 1] = pts[js] + ts[:, None] * (pts[js + 1] - pts[js])
    return out


def distance_matrix(points: np.ndarray, arc_len: float) -> np.ndarray:
    """values[i][j] = |p_i - p_j| / arc_len."""
    if not arc_len > 0:
        raise DegenerateSegment("arc length must be > 0 to normalize")
    pts = np.asarray(points, dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1)) / arc_len


def batch_distance_matrices(points: np.ndarray, arcs: np.ndarray) -> np.ndarray:
    """Kernel-backed batch form: (B, n, 3) control points -> (B, n, n)."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    arcs = np.ascontiguousarray(arcs, dtype=np.float64)
    if np.any(arcs <= 0):
        raise DegenerateSegment("arc lengths must be > 0 to normalize")
    return _kernels.distance_matrices(pts, arcs)


def segment_descriptor(seg: Segment, n: int = N_CONTROL) -> np.ndarray:
    return distance_matrix(resample(seg, n), seg.arc_length)


def descriptors_for_segments(segments, n: int = N_CONTROL):
    """Resample every segment and compute all matrices in one kernel call.

    Returns (matrices (B,n,n), control_points (B,n,3))."""
    ctrl = np.empty((len(segments), n, 3), dtype=np.float64)
    arcs = np.empty(len(segments), dtype=np.float64)
    for i, seg in enumerate(segments):
        ctrl[i] = resample(seg, n)
        arcs[i] = seg.arc_length
    return batch_distance_matrices(ctrl, arcs), ctrl


def validate_matrix(values: np.ndarray, tol: float = 1e-9) -> None:
    """Raise BadParam unless `values` satisfies the descriptor invariants."""
    v = np.asarray(values)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise BadParam("descriptor must be square")
    if np.abs(np.diagonal(v)).max() > tol:
        raise BadParam("diagonal must be zero")
    if np.abs(v - v.T).max() > tol:
        raise BadParam("matrix must be symmetric")
    if v.min() < -tol or v.max() > 1.0 + tol:
        raise BadParam("entries must lie in [0, 1]")
    if (v[:, :, None] + v[None, :, :] - v[:, None, :]).min() < -tol:
        raise BadParam("triangle inequality violated")


_DM_HEADER = struct.Struct("<II")


def write_dm(path, matrices: np.ndarray) -> None:
    """Descriptor batch file: u32 count, u32 n, then count*n*n f32-LE."""
    m = np.asarray(matrices)
    if m.ndim != 3 or m.shape[1] != m.shape[2]:
        raise BadParam("expected (count, n, n) matrices")
    try:
        with open(path, "wb") as fh:
            fh.write(_DM_HEADER.pack(m.shape[0], m.shape[1]))
            fh.write(np.ascontiguousarray(m.astype("<f4")).tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def read_dm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise IoError(str(e)) from e
    if len(blob) < _DM_HEADER.size:
        raise FormatError("descriptor file shorter than its header")
    count, n = _DM_HEADER.unpack_from(blob)
    expected = _DM_HEADER.size + count * n * n * 4
    if len(blob) != expected:
        raise FormatError(f"payload is {len(blob)} bytes, header implies {expected}")
    return np.frombuffer(blob, dtype="<f4", offset=_DM_HEADER.size).astype(
        np.float64).reshape(count, n, n)

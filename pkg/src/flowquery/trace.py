"""Streamline integration: fixed-step RK4 on raw velocity with seeding and
termination policies, plus the line-delimited text export format."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import BadParam, IoError, OutOfDomain
from .field import VectorField

TERMINATIONS = ("domain_exit", "max_steps", "stagnation")


@dataclass
class TraceConfig:
    step: float = 0.01
    max_steps: int = 1000
    min_speed: float = 1e-9
    direction: str = "forward"

    def __post_init__(self):
        if not self.step > 0:
            raise BadParam("step must be > 0")
        if self.max_steps < 1:
            raise BadParam("max_steps must be >= 1")
        if self.min_speed < 0:
            raise BadParam("min_speed must be >= 0")
        if self.direction not in ("forward", "backward", "both"):
            raise BadParam(f"unknown direction {self.direction!r}")


@dataclass
class Streamline:
    """Ordered polyline with cumulative arc length and a termination reason."""

    points: np.ndarray
    cumulative_arc: np.ndarray = dc_field(default=None)
    seed_id: int = 0
    termination: str = "max_steps"

    def __post_init__(self):
        self.points = np.ascontiguousarray(np.atleast_2d(self.points), dtype=np.float64)
        if self.points.shape[0] < 1 or self.points.shape[1] != 3:
            raise BadParam("streamline needs >= 1 3D point")
        if self.cumulative_arc is None:
            self.cumulative_arc = cumulative_arc(self.points)
        else:
            self.cumulative_arc = np.asarray(self.cumulative_arc, dtype=np.float64)
        if self.termination not in TERMINATIONS:
            raise BadParam(f"unknown termination {self.termination!r}")

    @property
    def arc_length(self) -> float:
        return float(self.cumulative_arc[-1])

    def __len__(self):
        return self.points.shape[0]


def cumulative_arc(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    out = np.empty(len(points))
    out[0] = 0.0
    np.cumsum(seg, out=out[1:])
    return out


def _run(field: VectorField, seed: np.ndarray, cfg: TraceConfig, sign: float):
    nx, ny, nz = field.dims
    pts, _, term = _kernels.trace_rk4(
        field.data, nx, ny, nz, field.bounds_min, field.bounds_max,
        np.ascontiguousarray(seed, dtype=np.float64), float(cfg.step),
        int(cfg.max_steps), float(cfg.min_speed), sign)
    return pts, TERMINATIONS[term]


def trace(field: VectorField, seed, cfg: TraceConfig, seed_id: int = 0) -> Streamline:
    """Integrate one streamline from `seed`.

    Raw (non-normalized) velocity is integrated; the trace stops on domain
    exit (keeping the last in-domain point), after max_steps, or when speed
    drops below min_speed.  direction="both" joins the reversed backward
    trace with the forward one, dropping the duplicated seed; its
    termination reports the forward half.
    """
    seed = np.asarray(seed, dtype=np.float64)
    if not field.contains(seed):
        raise OutOfDomain(f"seed {seed.tolist()} outside field bounds")

    if cfg.direction == "forward":
        pts, term = _run(field, seed, cfg, 1.0)
    elif cfg.direction == "backward":
        pts, term = _run(field, seed, cfg, -1.0)
    else:
        back, _ = _run(field, seed, cfg, -1.0)
        fwd, term = _run(field, seed, cfg, 1.0)
        pts = np.concatenate([back[::-1], fwd[1:]], axis=0)
    return Streamline(points=pts, seed_id=seed_id, termination=term)


def seed_uniform(bounds, n: int, seed: int = 0) -> np.ndarray:
    """n i.i.d. uniform points inside bounds; deterministic per rng seed."""
    if n < 1:
        raise BadParam("n must be >= 1")
    bmin = np.asarray(bounds[0], dtype=np.float64)
    bmax = np.asarray(bounds[1], dtype=np.float64)
    rng = np.random.default_rng(seed)
    return rng.uniform(bmin, bmax, size=(int(n), 3))


def trace_many(field: VectorField, seeds, cfg: TraceConfig) -> list[Streamline]:
    return [trace(field, s, cfg, seed_id=i) for i, s in enumerate(np.atleast_2d(seeds))]


def save_streamlines(lines, path) -> None:
    """One record per line: `id n x0 y0 z0 ... x{n-1} y{n-1} z{n-1}`,
    coordinates at 9 significant digits."""
    try:
        with open(path, "w") as fh:
            for sl in lines:
                coords = " ".join(f"{c:.9g}" for c in sl.points.reshape(-1))
                fh.write(f"{sl.seed_id} {len(sl)} {coords}\n")
    except OSError as e:
        raise IoError(str(e)) from e


def load_streamlines(path) -> list[Streamline]:
    out = []
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IoError(str(e)) from e
    for line in text.splitlines():
        tok = line.split()
        if not tok:
            continue
        sid, n = int(tok[0]), int(tok[1])
        pts = np.array(tok[2:2 + 3 * n], dtype=np.float64).reshape(n, 3)
        out.append(Streamline(points=pts, seed_id=sid))
    return out

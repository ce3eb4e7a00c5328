"""Synthetic labeled corpora for evaluation and training experiments.

Two builders: a four-class segment corpus traced from the analytic field
generators (linear-probe protocol), and a five-class caption/segment corpus
of parametric curves for matcher training.  Everything is deterministic in
its seed.
"""

from __future__ import annotations

import numpy as np

from .descriptor import SamplingConfig, Segment, batch_distance_matrices, resample, sample_segments
from .errors import BadParam
from .field import CriticalPointSpec, gen_synthetic
from .trace import TraceConfig, cumulative_arc, seed_uniform, trace

PROBE_CLASSES = ("uniform", "rotor-helix", "critical_points", "two_swirls")


def random_rotation(rng) -> np.ndarray:
    """Haar-ish random rotation from the QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diagonal(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def segment_from_points(points, sid=0, level=0) -> Segment:
    pts = np.asarray(points, dtype=np.float64)
    arc = cumulative_arc(pts)[-1]
    return Segment(streamline_id=sid, level=level, arc_start=0.0,
                   arc_end=float(arc), points=pts)


def random_smooth_segments(count, seed=0, n_dense=96) -> list[Segment]:
    """Random cubic space curves; generic smooth shapes for invariance tests."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_dense)
    basis = np.stack([t, t ** 2, t ** 3], axis=1)
    out = []
    for i in range(count):
        coef = rng.standard_normal((3, 3))
        pts = basis @ coef
        out.append(segment_from_points(pts, sid=i))
    return out


# four-class probe corpus ------------------------------------------------------

_BOUNDS = (np.array([-2.0, -2.0, -2.0]), np.array([2.0, 2.0, 2.0]))
_TRACE = TraceConfig(step=0.02, max_steps=500, min_speed=1e-4, direction="both")
_SAMPLING = SamplingConfig(levels=2, max_len=3.0, overlap=0.5, min_points=6)


def _symmetric_specs(seed, count=5):
    """Strain-only critical points: symmetric Jacobians give saddle/node
    bends with no swirl, keeping the class distinct from the helix family."""
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(count):
        pos = _BOUNDS[0] + (_BOUNDS[1] - _BOUNDS[0]) * (0.2 + 0.6 * rng.random(3))
        jac = rng.standard_normal((3, 3))
        jac = 0.5 * (jac + jac.T)
        jac *= (1.0 + rng.random()) / max(np.linalg.norm(jac, 2), 1e-9)
        specs.append(CriticalPointSpec(pos, jac, float(1.2 * (0.5 + 0.5 * rng.random()))))
    return specs


def _class_fields(name, seed):
    if name == "uniform":
        return [(gen_synthetic("uniform", (24, 24, 24), _BOUNDS, seed=seed), None)]
    if name == "rotor-helix":
        return [(gen_synthetic("helix", (24, 24, 24), _BOUNDS, {"pitch": p},
                               seed=seed), None) for p in (0.5, 0.8, 1.2)]
    if name == "critical_points":
        out = []
        for i in range(3):
            specs = _symmetric_specs(seed + i)
            out.append((gen_synthetic("critical_points", (32, 32, 32), _BOUNDS,
                                      {"specs": specs}, seed=seed + i), specs))
        return out
    if name == "two_swirls":
        return [(gen_synthetic("two_swirls", (32, 32, 32), _BOUNDS,
                               {"pitch": p, "radius": 0.9}, seed=seed), None)
                for p in (0.05, 0.08)]
    raise BadParam(f"unknown probe class {name!r}")


def _class_seeds(name, bounds, count, rng, specs=None):
    """Seed points confined to where each class shows its signature shape."""
    pts = seed_uniform(bounds, count, int(rng.integers(2 ** 31)))
    if name == "rotor-helix":
        radius = np.hypot(pts[:, 0], pts[:, 1])
        return pts[(radius > 0.6) & (radius < 1.8)]
    if name == "two_swirls":
        # orbit annuli around the counter-rotating cores: near-closed loops
        r1 = np.hypot(pts[:, 0] + 1.0, pts[:, 1])
        r2 = np.hypot(pts[:, 0] - 1.0, pts[:, 1])
        rm = np.minimum(r1, r2)
        return pts[(rm > 0.25) & (rm < 0.85)]
    if name == "critical_points" and specs:
        dist = np.min([np.linalg.norm(pts - sp.position, axis=1) / sp.radius
                       for sp in specs], axis=0)
        return pts[(dist > 0.3) & (dist < 1.5)]
    return pts


def build_probe_corpus(per_class: int = 600, seed: int = 0):
    """Segments + descriptors for the four synthetic field classes.

    Returns (descriptors (N,32,32), labels (N,), class_names, segments)."""
    rng = np.random.default_rng(seed)
    all_pts, all_arcs, labels, segments = [], [], [], []
    for label, name in enumerate(PROBE_CLASSES):
        fields = _class_fields(name, seed)
        target_per_field = -(-3 * per_class // len(fields))
        collected = []
        for fld, specs in fields:
            seeds = _class_seeds(name, fld.bounds, 8 * per_class, rng, specs)
            got = 0
            for s in seeds:
                line = trace(fld, s, _TRACE, seed_id=len(segments) + len(collected))
                new = sample_segments(line, _SAMPLING)
                collected.extend(new)
                got += len(new)
                if got >= target_per_field:
                    break
        if len(collected) < per_class:
            raise BadParam(f"class {name} yielded only {len(collected)} segments")
        pick = rng.permutation(len(collected))[:per_class]
        for j in pick:
            seg = collected[j]
            all_pts.append(resample(seg))
            all_arcs.append(seg.arc_length)
            labels.append(label)
            segments.append(seg)
    mats = batch_distance_matrices(np.asarray(all_pts), np.asarray(all_arcs))
    return mats, np.asarray(labels, dtype=np.int64), list(PROBE_CLASSES), segments


# five-class caption corpus ------------------------------------------------------

TOY_CLASSES = (
    ("line", ("straight laminar flow channel",
              "smooth uniform parallel streaming",
              "steady linear current with no rotation")),
    ("circle", ("closed circular vortex orbit",
                "round recirculating eddy loop",
                "planar ring of rotating flow")),
    ("helix", ("rising helical swirl column",
               "corkscrew vortex climbing upward",
               "three dimensional spiral staircase flow")),
    ("spiral", ("tightening flat spiral eddy",
                "planar whirlpool winding inward",
                "converging rotational sink pattern")),
    ("wave", ("meandering wavy shear band",
              "undulating serpentine oscillation",
              "side to side weaving stream")),
)


def _toy_curve(kind, rng, n_dense=120):
    t = np.linspace(0.0, 1.0, n_dense)
    if kind == "line":
        pts = np.stack([t, np.zeros_like(t), np.zeros_like(t)], axis=1)
    elif kind == "circle":
        span = rng.uniform(0.6, 0.95) * 2.0 * np.pi
        ang = t * span
        pts = np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=1)
    elif kind == "helix":
        turns = rng.uniform(1.5, 3.0)
        ang = t * turns * 2.0 * np.pi
        pitch = rng.uniform(0.15, 0.3)
        pts = np.stack([np.cos(ang), np.sin(ang), pitch * ang], axis=1)
    elif kind == "spiral":
        turns = rng.uniform(2.0, 3.5)
        ang = t * turns * 2.0 * np.pi
        r = np.exp(-0.25 * ang)
        pts = np.stack([r * np.cos(ang), r * np.sin(ang), np.zeros_like(ang)], axis=1)
    elif kind == "wave":
        cycles = rng.uniform(2.0, 4.0)
        amp = rng.uniform(0.2, 0.4)
        pts = np.stack([t * 3.0, amp * np.sin(cycles * 2.0 * np.pi * t),
                        np.zeros_like(t)], axis=1)
    else:
        raise BadParam(f"unknown toy curve {kind!r}")
    rot = random_rotation(rng)
    return pts @ rot.T + rng.uniform(-5, 5, size=3)


def build_toy_matcher_corpus(seed: int = 0, per_class: int = 40,
                             holdout: int = 8, sets_per_class: int = 8,
                             set_size: int = 4):
    """Five parametric shape classes with class-specific captions.

    Returns (corpus, held_out) where corpus is a list of (caption,
    descriptor batch) training pairs and held_out maps class index to
    (segments, canonical caption) reserved for retrieval evaluation."""
    rng = np.random.default_rng(seed)
    corpus, held_out = [], []
    for ci, (kind, captions) in enumerate(TOY_CLASSES):
        segs = [segment_from_points(_toy_curve(kind, rng), sid=ci * per_class + j)
                for j in range(per_class)]
        train, test = segs[:per_class - holdout], segs[per_class - holdout:]
        pts = np.asarray([resample(s) for s in train])
        arcs = np.asarray([s.arc_length for s in train])
        mats = batch_distance_matrices(pts, arcs)
        for k in range(sets_per_class):
            idx = rng.choice(len(train), size=set_size, replace=False)
            corpus.append((captions[k % len(captions)], mats[idx]))
        held_out.append((test, captions[0]))
    return corpus, held_out


def toy_descriptors(seed: int = 0, per_class: int = 40):
    """All toy-class descriptors pooled, for encoder pretraining."""
    rng = np.random.default_rng(seed)
    pts, arcs, labels = [], [], []
    for ci, (kind, _) in enumerate(TOY_CLASSES):
        for _ in range(per_class):
            p = _toy_curve(kind, rng)
            pts.append(resample(segment_from_points(p)))
            arcs.append(cumulative_arc(np.asarray(p, dtype=np.float64))[-1])
            labels.append(ci)
    mats = batch_distance_matrices(np.asarray(pts), np.asarray(arcs))
    return mats, np.asarray(labels, dtype=np.int64)

import numpy as np
import pytest

from flowquery.errors import BadParam, OutOfDomain
from flowquery.field import VectorField, gen_synthetic
from flowquery.trace import (Streamline, TraceConfig, load_streamlines,
                             save_streamlines, seed_uniform, trace, trace_many)

CUBE = ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0))


def test_uniform_field_exact_endpoint():
    f = gen_synthetic("uniform", (5, 5, 5), ((0, 0, 0), (2, 1, 1)))
    sl = trace(f, (0.0, 0.5, 0.5), TraceConfig(step=0.1, max_steps=10))
    assert len(sl) == 11
    assert abs(sl.points[-1, 0] - 1.0) < 1e-12
    assert np.array_equal(sl.points[-1, 1:], [0.5, 0.5])
    assert abs(sl.arc_length - 1.0) < 1e-12
    assert sl.termination == "max_steps"


def test_rotor_orbit_stays_on_unit_circle():
    f = gen_synthetic("rotor", (9, 9, 9), CUBE)
    sl = trace(f, (1.0, 0.0, 0.0), TraceConfig(step=0.01, max_steps=629))
    radius = np.hypot(sl.points[:, 0], sl.points[:, 1])
    assert np.abs(radius - 1.0).max() < 1e-5
    assert len(sl) == 630


def test_zero_field_stagnates_at_seed():
    f = VectorField((4, 4, 4), ((0, 0, 0), (1, 1, 1)), np.zeros((64, 3)))
    sl = trace(f, (0.3, 0.3, 0.3), TraceConfig(step=0.1, max_steps=10,
                                               min_speed=1e-6))
    assert len(sl) == 1
    assert sl.termination == "stagnation"


def test_domain_exit_keeps_last_inside_point():
    f = gen_synthetic("uniform", (5, 5, 5), ((0, 0, 0), (1, 1, 1)))
    sl = trace(f, (0.75, 0.5, 0.5), TraceConfig(step=0.1, max_steps=50))
    assert sl.termination == "domain_exit"
    assert np.all(sl.points <= 1.0) and np.all(sl.points >= 0.0)


def test_seed_outside_raises():
    f = gen_synthetic("uniform", (4, 4, 4), ((0, 0, 0), (1, 1, 1)))
    with pytest.raises(OutOfDomain):
        trace(f, (2.0, 0.5, 0.5), TraceConfig())


def test_all_points_inside_bounds():
    f = gen_synthetic("critical_points", (16, 16, 16), CUBE, {"count": 4}, seed=5)
    for seed_pt in seed_uniform(f.bounds, 20, seed=1):
        sl = trace(f, seed_pt, TraceConfig(step=0.05, max_steps=200))
        assert np.all(sl.points >= f.bounds_min - 1e-12)
        assert np.all(sl.points <= f.bounds_max + 1e-12)


def test_backward_equals_forward_in_reversed_field():
    f = gen_synthetic("helix", (9, 9, 9), CUBE, {"pitch": 0.4})
    neg = VectorField(f.dims, f.bounds, -f.data)
    cfg_b = TraceConfig(step=0.02, max_steps=100, direction="backward")
    cfg_f = TraceConfig(step=0.02, max_steps=100, direction="forward")
    a = trace(f, (0.5, 0.0, 0.0), cfg_b)
    b = trace(neg, (0.5, 0.0, 0.0), cfg_f)
    assert np.abs(a.points - b.points).max() < 1e-9


def test_both_direction_joins_and_dedupes_seed():
    f = gen_synthetic("uniform", (5, 5, 5), ((0, 0, 0), (1, 1, 1)))
    sl = trace(f, (0.5, 0.5, 0.5), TraceConfig(step=0.05, max_steps=4,
                                               direction="both"))
    assert len(sl) == 9  # 4 backward + seed + 4 forward
    deltas = np.linalg.norm(np.diff(sl.points, axis=0), axis=1)
    assert deltas.min() > 0  # no duplicated seed point


def test_arc_length_invariant_under_rigid_motion():
    rng = np.random.default_rng(12)
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]

    def helix_velocity(pts):
        return np.stack([-pts[:, 1], pts[:, 0], np.full(len(pts), 0.4)], axis=1)

    xs = np.linspace(-2, 2, 9)
    Z, Y, X = np.meshgrid(xs, xs, xs, indexing="ij")
    nodes = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    f = VectorField((9, 9, 9), CUBE, helix_velocity(nodes))
    # conjugated field v'(p) = R v(R^T p); linear, so trilinear stays exact
    g = VectorField((9, 9, 9), CUBE, helix_velocity(nodes @ q) @ q.T)
    cfg = TraceConfig(step=0.02, max_steps=60)
    seed = np.array([0.5, 0.1, 0.0])
    a = trace(f, seed, cfg)
    b = trace(g, q @ seed, cfg)
    assert abs(a.arc_length - b.arc_length) < 1e-9
    assert np.abs(b.points - a.points @ q.T).max() < 1e-9


def test_streamline_cumulative_arc_consistent():
    f = gen_synthetic("rotor", (9, 9, 9), CUBE)
    sl = trace(f, (1.0, 0.0, 0.3), TraceConfig(step=0.02, max_steps=50))
    steps = np.linalg.norm(np.diff(sl.points, axis=0), axis=1)
    assert np.abs(np.diff(sl.cumulative_arc) - steps).max() < 1e-9
    assert sl.cumulative_arc[0] == 0.0


def test_seed_uniform_contract():
    with pytest.raises(BadParam):
        seed_uniform(((0, 0, 0), (1, 1, 1)), 0)
    a = seed_uniform(((0, 0, 0), (1, 1, 1)), 100, seed=9)
    b = seed_uniform(((0, 0, 0), (1, 1, 1)), 100, seed=9)
    assert np.array_equal(a, b)
    big = seed_uniform(((0, 0, 0), (1, 1, 1)), 10_000, seed=2)
    assert np.abs(big.mean(axis=0) - 0.5).max() < 0.02
    assert big.min() >= 0.0 and big.max() <= 1.0


def test_streamline_text_roundtrip(tmp_path):
    f = gen_synthetic("helix", (9, 9, 9), CUBE, {"pitch": 0.5})
    lines = trace_many(f, seed_uniform(f.bounds, 5, seed=3),
                       TraceConfig(step=0.05, max_steps=40))
    path = tmp_path / "lines.txt"
    save_streamlines(lines, path)
    loaded = load_streamlines(path)
    assert [sl.seed_id for sl in loaded] == [sl.seed_id for sl in lines]
    for a, b in zip(lines, loaded):
        assert len(a) == len(b)
        # 9 significant digits of round trip
        assert np.abs(a.points - b.points).max() < 1e-7 * max(
            1.0, np.abs(a.points).max())


def test_trace_config_validation():
    with pytest.raises(BadParam):
        TraceConfig(step=0.0)
    with pytest.raises(BadParam):
        TraceConfig(max_steps=0)
    with pytest.raises(BadParam):
        TraceConfig(direction="sideways")
    with pytest.raises(BadParam):
        Streamline(points=np.zeros((0, 3)))

import numpy as np
import pytest

from flowquery.errors import BadParam, FormatError, IoError, OutOfDomain
from flowquery.field import (CriticalPointSpec, VectorField, gen_synthetic,
                             interpolate, interpolate_many, load_raw, save_raw)

BOUNDS = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def linear_x_field(n=5):
    # v = (x, 0, 0) sampled on an exactly representable dyadic grid
    xs = np.linspace(0, 1, n)
    Z, Y, X = np.meshgrid(xs, xs, xs, indexing="ij")
    data = np.stack([X, np.zeros_like(X), np.zeros_like(X)], axis=-1).reshape(-1, 3)
    return VectorField((n, n, n), BOUNDS, data)


def test_constant_field_interpolates_constant():
    f = gen_synthetic("uniform", (4, 4, 4), BOUNDS)
    for p in [(0.5, 0.5, 0.5), (0.1, 0.9, 0.3), (0, 0, 0), (1, 1, 1)]:
        assert np.array_equal(interpolate(f, p), [1.0, 0.0, 0.0])


def test_grid_node_identity():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((5 * 5 * 5, 3))
    f = VectorField((5, 5, 5), BOUNDS, data)
    xs = np.linspace(0, 1, 5)
    for (i, j, k) in [(0, 0, 0), (2, 3, 1), (4, 4, 4), (1, 0, 3)]:
        got = interpolate(f, (xs[i], xs[j], xs[k]))
        assert np.array_equal(got, data[i + 5 * (j + 5 * k)])


def test_grid_node_identity_awkward_spacing():
    # spacings that are not exactly representable stay within float slack
    rng = np.random.default_rng(8)
    data = rng.standard_normal((7 * 6 * 5, 3))
    f = VectorField((7, 6, 5), ((0, 0, 0), (1, 2, 0.7)), data)
    xs, ys, zs = (f.axis_coords(a) for a in range(3))
    got = interpolate(f, (xs[3], ys[4], zs[2]))
    assert np.allclose(got, data[3 + 7 * (4 + 6 * 2)], atol=1e-12)


def test_linear_field_exact_at_midpoint():
    f = linear_x_field(5)
    v = interpolate(f, (0.375, 0.625, 0.125))  # cell midpoints
    assert abs(v[0] - 0.375) < 1e-12
    assert v[1] == 0.0 and v[2] == 0.0


def test_out_of_domain_raises():
    f = gen_synthetic("uniform", (4, 4, 4), BOUNDS)
    with pytest.raises(OutOfDomain):
        interpolate(f, (1.5, 0.5, 0.5))
    with pytest.raises(OutOfDomain):
        interpolate_many(f, [[0.5, 0.5, 0.5], [0.5, -0.1, 0.5]])


def test_face_continuity():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((6 * 6 * 6, 3))
    f = VectorField((6, 6, 6), BOUNDS, data)
    xs = f.axis_coords(0)
    # approach a shared cell face from both sides
    for y, z in [(0.33, 0.77), (0.5, 0.5)]:
        face = xs[2]
        left = interpolate(f, (np.nextafter(face, 0), y, z))
        right = interpolate(f, (np.nextafter(face, 1), y, z))
        assert np.abs(left - right).max() < 1e-9


def test_invariants_rejected():
    with pytest.raises(BadParam):
        VectorField((1, 4, 4), BOUNDS, np.zeros((16, 3)))
    with pytest.raises(BadParam):
        VectorField((2, 2, 2), BOUNDS, np.zeros((7, 3)))
    with pytest.raises(BadParam):
        VectorField((2, 2, 2), ((0, 0, 0), (0, 1, 1)), np.zeros((8, 3)))
    bad = np.zeros((8, 3))
    bad[3, 1] = np.nan
    with pytest.raises(BadParam):
        VectorField((2, 2, 2), BOUNDS, bad)


def test_field_data_is_immutable():
    f = gen_synthetic("uniform", (3, 3, 3), BOUNDS)
    with pytest.raises(ValueError):
        f.data[0, 0] = 2.0


def test_gen_synthetic_deterministic():
    a = gen_synthetic("critical_points", (8, 8, 8), BOUNDS, {"count": 3}, seed=11)
    b = gen_synthetic("critical_points", (8, 8, 8), BOUNDS, {"count": 3}, seed=11)
    assert np.array_equal(a.data, b.data)


def test_gen_synthetic_bad_params():
    with pytest.raises(BadParam):
        gen_synthetic("warp", (4, 4, 4), BOUNDS)
    with pytest.raises(BadParam):
        gen_synthetic("helix", (4, 4, 4), BOUNDS, {"pitch": -1.0})
    with pytest.raises(BadParam):
        gen_synthetic("two_swirls", (4, 4, 4), BOUNDS, {"radius": 0.0})
    with pytest.raises(BadParam):
        CriticalPointSpec((0, 0, 0), np.eye(3), radius=-0.5)


def test_rotor_divergence_free():
    f = gen_synthetic("rotor", (17, 17, 17), ((-2, -2, -2), (2, 2, 2)))
    nx, ny, nz = f.dims
    v = f.data.reshape(nz, ny, nx, 3)
    h = 4.0 / (nx - 1)
    div = ((v[1:-1, 1:-1, 2:, 0] - v[1:-1, 1:-1, :-2, 0])
           + (v[1:-1, 2:, 1:-1, 1] - v[1:-1, :-2, 1:-1, 1])
           + (v[2:, 1:-1, 1:-1, 2] - v[:-2, 1:-1, 1:-1, 2])) / (2 * h)
    assert np.abs(div).max() < 1e-6


def test_critical_point_is_a_zero():
    spec = CriticalPointSpec((0.5, 0.5, 0.5), np.eye(3), radius=0.1)
    f = gen_synthetic("critical_points", (33, 33, 33), BOUNDS, {"specs": [spec]})
    assert np.linalg.norm(interpolate(f, (0.5, 0.5, 0.5))) < 1e-3


def test_roundtrip_bitwise(tmp_path):
    f = gen_synthetic("two_swirls", (6, 5, 4), ((-1, -1, -1), (1, 2, 3)),
                      {"pitch": 0.3})
    save_raw(f, tmp_path / "fld")
    g = load_raw(tmp_path / "fld")
    assert g.dims == f.dims
    assert np.array_equal(g.bounds_min, f.bounds_min)
    assert np.array_equal(g.bounds_max, f.bounds_max)
    assert np.array_equal(g.data, f.data)


def test_payload_size_2x2x2(tmp_path):
    f = gen_synthetic("uniform", (2, 2, 2), BOUNDS)
    save_raw(f, tmp_path / "tiny")
    assert (tmp_path / "tiny.vec").stat().st_size == 96  # 8 nodes * 3 * 4 bytes


def test_truncated_payload_raises(tmp_path):
    f = gen_synthetic("uniform", (4, 4, 4), BOUNDS)
    save_raw(f, tmp_path / "fld")
    blob = (tmp_path / "fld.vec").read_bytes()
    (tmp_path / "fld.vec").write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        load_raw(tmp_path / "fld")


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        load_raw(tmp_path / "nope")

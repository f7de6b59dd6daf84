import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liqimpulse.errors import CorruptionError, GridMismatchError, InputError
from liqimpulse.lattice import (ClampCounter, GridSpec, PolicyField, ValueSurface, interpolate, load,
                                nearest_index, problem_grid, save, y_stencil)
from liqimpulse.costs import CostSpec
from liqimpulse.market import MarketModel


def small_grid(extra=()):
    return GridSpec.build(1.0, 4, (0.0, 2.0), 5, (-2.0, 2.0), 5, 1.0, 5, extra)


def test_build_contains_zero_and_eps():
    g = small_grid(extra=(0.1,))
    assert 0.0 in g.z and 0.1 in g.z and -0.1 in g.z
    assert np.allclose(g.z, -g.z[::-1])
    with pytest.raises(InputError):
        GridSpec([0, 1], [0, 1], [0, 1], [-1, 0.5, 1])


def test_problem_grid_box():
    m = MarketModel.constant(0.05, 0.2)
    c = CostSpec("power", c0=0.1, alpha=0.5, M=2.0)
    g = problem_grid(m, c, 1.0, 50, 1.0, 0.0, 41, 41, 21, 0.003)
    hx = 6 * 0.2 + 0.05
    assert g.x[0] == pytest.approx(1 - hx) and g.x[-1] == pytest.approx(1 + hx)
    assert g.y[-1] >= 2.0 * (g.x[-1] - g.x[0]) + c(4.0) - 1e-12
    assert g.shape == (51, 41, 41, 23)


def test_interpolate_identity_and_linear():
    g = small_grid()
    rng = np.random.default_rng(1)
    s = ValueSurface(g, 1, rng.normal(size=g.shape))
    for k, a, j, i in [(0, 0, 0, 0), (2, 3, 4, 1), (4, 4, 2, 2)]:
        assert interpolate(s, g.t[k], g.x[a], g.y[j], g.z[i]) == s.values[k, a, j, i]
    v = np.zeros(g.shape)
    v[:, :, 1, :] = 1.0
    v[:, :, 2, :] = 3.0
    s = ValueSurface(g, 1, v)
    assert interpolate(s, 0.0, 0.5, 0.5 * (g.y[1] + g.y[2]), 0.0) == pytest.approx(2.0)


def test_no_cross_zero_averaging():
    g = small_grid(extra=(0.1,))
    v = np.zeros(g.shape)
    ip, im = g.z_index(0.1), g.z_index(-0.1)
    v[..., ip] = 5.0
    v[..., im] = -7.0
    v[..., g.zero_index] = 1.0
    s = ValueSurface(g, 1, v)
    assert interpolate(s, 0.0, 1.0, 0.0, 0.0) == 1.0
    assert interpolate(s, 0.0, 1.0, 0.0, 0.04) == 5.0
    assert interpolate(s, 0.0, 1.0, 0.0, -0.04) == -7.0


def test_time_never_interpolated_and_clamps_counted():
    g = small_grid()
    s = ValueSurface(g, 1, np.zeros(g.shape))
    with pytest.raises(InputError):
        interpolate(s, 0.1, 1.0, 0.0, 0.0)
    c = ClampCounter()
    interpolate(s, 0.0, 5.0, 10.0, 0.0, counter=c)
    assert c["x"] == 1 and c["y"] == 1


def test_y_extension_slopes():
    nodes = np.array([0.0, 1.0, 2.0])
    st_ = y_stencil(nodes, np.array([-1.0, 3.0]), (1.5, 0.5))
    v = st_.apply(np.array([10.0, 11.0]), np.array([10.0, 11.0]))
    assert v.tolist() == [8.5, 11.5]


def test_save_load_roundtrip(tmp_path):
    g = small_grid()
    rng = np.random.default_rng(2)
    s = ValueSurface(g, 3, rng.normal(size=g.shape), (1.5, 0.5), {"config_hash": "abc"})
    f = tmp_path / "s.lqv"
    save(s, f)
    r = load(f)
    assert r.values.tobytes() == s.values.tobytes() and r.n_jumps == 3
    assert r.grid.same_as(g) and r.provenance == {"config_hash": "abc"}
    p = PolicyField(g, rng.random(g.shape) > 0.5, np.broadcast_to(g.z, g.shape).copy(), 3)
    save(p, tmp_path / "p.lqp")
    q = load(tmp_path / "p.lqp")
    assert np.array_equal(q.exercise, p.exercise) and np.array_equal(q.target, p.target)


def test_load_detects_corruption(tmp_path):
    g = small_grid()
    f = tmp_path / "s.lqv"
    save(ValueSurface(g, 1, np.ones(g.shape)), f)
    raw = f.read_bytes()
    (tmp_path / "t.lqv").write_bytes(raw[:-8])
    with pytest.raises(CorruptionError):
        load(tmp_path / "t.lqv")
    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    (tmp_path / "f.lqv").write_bytes(bytes(flipped))
    with pytest.raises(CorruptionError):
        load(tmp_path / "f.lqv")
    (tmp_path / "m.lqv").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CorruptionError):
        load(tmp_path / "m.lqv")


def test_grid_mismatch_on_use(tmp_path):
    a = small_grid()
    b = GridSpec.build(1.0, 4, (0.0, 3.0), 5, (-2.0, 2.0), 5, 1.0, 5)
    save(ValueSurface(b, 1, np.zeros(b.shape)), tmp_path / "b.lqv")
    with pytest.raises(GridMismatchError):
        a.require_same(load(tmp_path / "b.lqv").grid)


def test_nearest_index():
    assert nearest_index([0.0, 1.0, 2.0], [-5, 0.4, 0.6, 1.5, 9]).tolist() == [0, 0, 1, 1, 2]


@settings(max_examples=50, deadline=None)
@given(data=st.lists(st.floats(0, 1), min_size=5, max_size=5), y1=st.floats(-2, 2), y2=st.floats(-2, 2),
       x=st.floats(0, 2), z=st.floats(-1, 1))
def test_interpolation_monotone_in_y(data, y1, y2, x, z):
    g = small_grid()
    inc = np.cumsum(np.asarray(data))  # nondecreasing in y
    v = np.broadcast_to(inc[None, None, :, None], g.shape).copy()
    v = v + np.arange(g.z.size)[None, None, None, :] * 0.1
    s = ValueSurface(g, 1, v)
    lo, hi = sorted((y1, y2))
    assert interpolate(s, 0.0, x, lo, z) <= interpolate(s, 0.0, x, hi, z) + 1e-12

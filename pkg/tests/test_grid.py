import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracflow.grid import GridSpec, assemble_kernel, build_grid, far_field_integral

from oracles import exterior_weight_brute, far_field_polar


def test_centers_row_major():
    g = build_grid(GridSpec(2, (2, 3), 0.5))
    assert g.size == 6
    assert np.allclose(g.centers[1], [0.25, 0.75])
    assert np.allclose(g.centers[3], [0.75, 0.25])
    assert g.flat_index((1, 2)) == 5
    assert g.multi_index(4) == (1, 1)
    assert g.volume == 0.25


@pytest.mark.parametrize("kw", [
    dict(dimension=3, cells_per_axis=2, spacing=1.0),
    dict(dimension=1, cells_per_axis=0, spacing=1.0),
    dict(dimension=1, cells_per_axis=2, spacing=0.0),
    dict(dimension=1, cells_per_axis=2, spacing=1.0, exterior_radius=0.5),
    dict(dimension=1, cells_per_axis=2, spacing=1.0, tail_mode="bogus"),
])
def test_gridspec_rejects(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


@pytest.mark.parametrize("s", [0.0, 1.0, -0.2, 1.5])
def test_kernel_rejects_s(s):
    spec = GridSpec(1, 3, 1.0)
    with pytest.raises(ValueError):
        assemble_kernel(build_grid(spec), s, spec)


def test_two_cell_pair_weight():
    # two cells at distance dx: w = v^2 dx^-(1+s)
    spec = GridSpec(1, 2, 0.5)
    K = assemble_kernel(build_grid(spec), 0.5, spec)
    assert K.pair_weights[0, 1] == pytest.approx(0.25 * 0.5 ** -1.5, rel=1e-14)
    assert K.pair_weights[0, 0] == 0.0


@given(st.integers(1, 5), st.integers(1, 3), st.floats(0.05, 0.95), st.sampled_from([0.25, 0.5, 1.0]))
@settings(max_examples=30, deadline=None)
def test_weights_symmetric_positive(n1, n2, s, dx):
    spec = GridSpec(2, (n1, n2), dx)
    K = assemble_kernel(build_grid(spec), s, spec)
    W = K.pair_weights
    assert np.array_equal(W, W.T)
    assert np.all(np.diag(W) == 0)
    assert np.all(W[~np.eye(K.size, dtype=bool)] > 0)
    assert np.all(K.exterior_weights > 0)
    assert not W.flags.writeable


def test_exterior_weights_mirror_symmetric():
    spec = GridSpec(2, 5, 0.2)
    K = assemble_kernel(build_grid(spec), 0.4, spec)
    b = K.exterior_weights.reshape(5, 5)
    assert np.allclose(b, b[::-1], rtol=1e-12)
    assert np.allclose(b, b.T, rtol=1e-12)
    # corner cells see more exterior than the centre
    assert b[0, 0] > b[2, 2]


@pytest.mark.parametrize("dim,cells,s", [(1, 4, 0.5), (1, 3, 0.2), (2, 3, 0.5), (2, 2, 0.7)])
def test_exterior_weights_match_cell_listing(dim, cells, s):
    dx = 1.0 / cells
    spec = GridSpec(dim, cells, dx)
    g = build_grid(spec)
    K = assemble_kernel(g, s, spec)
    ref = exterior_weight_brute(g.centers, dx, dim, s, K.half_cells, g.shape)
    assert np.allclose(K.exterior_weights, ref, rtol=1e-11)


@pytest.mark.parametrize("alpha", [2.1, 2.5, 2.9, 3.6])
def test_far_field_2d_matches_polar_integral(alpha):
    assert far_field_integral(2, alpha, 1.3) == pytest.approx(far_field_polar(alpha, 1.3), rel=1e-11)


def test_far_field_1d_closed_form():
    assert far_field_integral(1, 1.5, 2.0) == pytest.approx(2 * 2.0 ** -0.5 / 0.5)


def test_far_field_approximates_lattice_sum():
    # analytic tail with the default radius vs an explicit lattice out to 60 cell widths
    for dim, cells in [(1, 4), (2, 3)]:
        dx = 1.0 / cells
        near = GridSpec(dim, cells, dx, tail_mode="analytic")
        far = GridSpec(dim, cells, dx, exterior_radius=60 * dx, tail_mode="analytic")
        bare = GridSpec(dim, cells, dx, exterior_radius=60 * dx, tail_mode="none")
        g = build_grid(near)
        b0 = assemble_kernel(g, 0.5, near).exterior_weights
        b1 = assemble_kernel(g, 0.5, far).exterior_weights
        b2 = assemble_kernel(g, 0.5, bare).exterior_weights
        assert np.allclose(b0, b1, rtol=5e-3)
        assert np.all(b2 < b1)


def test_tail_none_drops_far_field():
    spec_a = GridSpec(1, 3, 0.5)
    spec_n = GridSpec(1, 3, 0.5, tail_mode="none")
    g = build_grid(spec_a)
    Ka, Kn = assemble_kernel(g, 0.5, spec_a), assemble_kernel(g, 0.5, spec_n)
    R = Ka.truncation_radius
    assert np.allclose(Ka.exterior_weights - Kn.exterior_weights, 0.5 * 2 * R ** -0.5 / 0.5)


def test_p_weights_reduce_to_p1():
    spec = GridSpec(2, 3, 0.25)
    K = assemble_kernel(build_grid(spec), 0.3, spec)
    assert np.allclose(K.pair_weights_p(1.0), K.pair_weights, rtol=0)
    a2 = K.pair_weights_p(2.0)
    v = K.volume
    assert np.allclose(a2, (K.pair_weights / v**2) ** 2 * v**2, rtol=1e-13)
    assert K.pair_weights_p(2.0) is a2


def test_op_norm_estimate_bounds_spectral_norm():
    spec = GridSpec(2, 3, 1 / 3)
    K = assemble_kernel(build_grid(spec), 0.5, spec)
    n = K.size
    rows = []
    for i in range(n):
        for j in range(i + 1, n):
            r = np.zeros(n)
            r[i], r[j] = 2 * K.pair_weights[i, j], -2 * K.pair_weights[i, j]
            rows.append(r)
    rows += list(np.diag(2 * K.exterior_weights))
    D = np.array(rows)
    assert np.linalg.norm(D, 2) <= K.op_norm_estimate * (1 + 1e-12)


def test_dump_csv(tmp_path):
    spec = GridSpec(1, 3, 0.5)
    K = assemble_kernel(build_grid(spec), 0.5, spec)
    K.dump_csv(tmp_path)
    lines = (tmp_path / "pair_weights.csv").read_text().splitlines()
    assert lines[0] == "i,j,w_ij" and len(lines) == 1 + 6
    i, j, w = lines[1].split(",")
    assert float(w) == K.pair_weights[int(i), int(j)]
    ext = (tmp_path / "exterior_weights.csv").read_text().splitlines()
    assert len(ext) == 4 and math.isclose(float(ext[1].split(",")[1]), K.exterior_weights[0])

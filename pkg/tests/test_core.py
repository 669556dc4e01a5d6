import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roconvex.core import (
    CapacityError,
    GridSpec,
    MatrixPoint,
    MatrixShape,
    RankOneDirection,
    ball_samples,
    ball_volume,
    coordinate_directions,
    grid_spec,
    gradient_field,
    make_grid,
    sample,
)
from roconvex.corpus import (
    FunctionHandle,
    abs_entry,
    corpus,
    half_norm_sq,
    linear,
    neg_det,
)


def test_shape_validation():
    with pytest.raises(ValueError):
        MatrixShape(0, 2)
    with pytest.raises(ValueError):
        MatrixShape(2, 3, symmetric=True)
    assert MatrixShape(2, 3).dim == 6
    assert MatrixShape(3, 3, symmetric=True).dim == 6


def test_symmetric_coords_roundtrip():
    shape = MatrixShape(2, 2, symmetric=True)
    coords = np.array([1.0, 2.0, 3.0])
    mat = shape.coords_to_matrix(coords)
    assert np.array_equal(mat, np.array([[1.0, 2.0], [2.0, 3.0]]))
    assert np.array_equal(shape.matrix_to_coords(mat), coords)
    # Frobenius norm counts the off-diagonal twice
    assert shape.frob_norm_coords(coords) == pytest.approx(np.linalg.norm(mat))


@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
@settings(max_examples=100, deadline=None)
def test_coords_matrix_roundtrip_general(vals):
    shape = MatrixShape(2, 3)
    coords = np.asarray(vals)
    assert np.array_equal(shape.matrix_to_coords(shape.coords_to_matrix(coords)), coords)


def test_grid_1x1_three_points():
    g = make_grid(grid_spec(MatrixShape(1, 1), 1.0, 3, "cube"))
    assert np.array_equal(g.coords.ravel(), [-1.0, 0.0, 1.0])
    assert g.mask.all()


def test_grid_2x2_node_count():
    g = make_grid(grid_spec(MatrixShape(2, 2), 1.0, 3, "cube"))
    assert g.node_count == 81


def test_grid_1x2_ball_masks_corners():
    g = make_grid(grid_spec(MatrixShape(1, 2), 1.0, 3, "ball"))
    assert int(g.mask.sum()) == 5
    outside = g.coords[~g.mask]
    assert np.allclose(np.linalg.norm(outside, axis=1), np.sqrt(2.0))


def test_grid_symmetry_about_center():
    g = make_grid(grid_spec(MatrixShape(2, 2), 1.0, 5, "cube"))
    flipped = -g.coords
    as_set = {tuple(row) for row in g.coords}
    assert all(tuple(row) in as_set for row in flipped)


def test_grid_budget_errors():
    shape = MatrixShape(2, 3)  # dim 6 over budget
    with pytest.raises(CapacityError):
        make_grid(grid_spec(shape, 1.0, 3, "cube"))
    with pytest.raises(CapacityError):
        make_grid(grid_spec(MatrixShape(2, 2), 1.0, 15, "cube"))
    with pytest.raises(CapacityError):
        make_grid(grid_spec(MatrixShape(2, 2), 1.0, 13, "cube"), max_nodes=1000)


def test_grid_spec_validation():
    shape = MatrixShape(1, 1)
    with pytest.raises(ValueError):
        GridSpec(shape, MatrixPoint.zero(shape), 1.0, 4)
    with pytest.raises(ValueError):
        GridSpec(shape, MatrixPoint.zero(shape), -1.0, 5)
    with pytest.raises(ValueError):
        GridSpec(shape, MatrixPoint.zero(shape), 1.0, 5, clip="disc")


def test_sample_values():
    shape = MatrixShape(1, 1)
    fld = sample(half_norm_sq(1.0, shape), grid_spec(shape, 1.0, 3, "cube"))
    assert np.array_equal(fld.values, [0.5, 0.0, 0.5])
    zero = sample(linear(np.zeros((2, 2)), name="zero"), grid_spec(MatrixShape(2, 2), 1.0, 3, "cube"))
    assert np.all(zero.values == 0.0)


def test_sample_neg_det_at_identity():
    spec = grid_spec(MatrixShape(2, 2), 1.0, 3, "cube")
    fld = sample(neg_det(), spec)
    coords = fld.node_coords()
    k = int(np.argmin(np.sum(np.abs(coords - np.array([1.0, 0.0, 0.0, 1.0])), axis=1)))
    assert fld.values[k] == -1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sample_rejects_non_finite():
    shape = MatrixShape(1, 1)
    bad = FunctionHandle("bad", shape, lambda x: 1.0 / x[..., 0, 0])
    with pytest.raises(ValueError, match="non-finite"):
        sample(bad, grid_spec(shape, 1.0, 3, "cube"))


def test_resample_refined_grid_agrees_exactly():
    shape = MatrixShape(2, 2)
    h = neg_det()
    coarse = sample(h, grid_spec(shape, 1.0, 5, "cube"))
    fine = sample(h, grid_spec(shape, 1.0, 9, "cube"))
    cc = coarse.node_coords()
    fc = fine.node_coords()
    index = {tuple(row): k for k, row in enumerate(fc)}
    for k, row in enumerate(cc):
        assert coarse.values[k] == fine.values[index[tuple(row)]]


def test_gradient_linear_exact():
    shape = MatrixShape(2, 2)
    ell = np.array([[1.0, -2.0], [0.5, 3.0]])
    fld = sample(linear(ell, shape), grid_spec(shape, 1.0, 5, "cube"))
    comps = gradient_field(fld)
    for k, (i, j) in enumerate(shape.coord_pairs()):
        vals = comps[k].values[comps[k].mask]
        assert np.allclose(vals, ell[i, j], atol=1e-13)


def test_gradient_quadratic_exact_and_kink_zero():
    shape = MatrixShape(1, 1)
    spec = grid_spec(shape, 1.0, 5, "cube")
    fld = sample(half_norm_sq(1.0, shape), spec)
    g = gradient_field(fld)[0]
    assert np.allclose(g.values[g.mask], fld.node_coords().ravel()[g.mask], atol=1e-14)
    absf = sample(abs_entry(0, 0, shape), spec)
    g = gradient_field(absf)[0]
    mid = spec.points_per_axis // 2
    assert g.values[mid] == 0.0


def test_gradient_second_order_convergence():
    # smooth non-polynomial: error ratio between h and h/2 stays near 4
    shape = MatrixShape(2, 2)
    ell = np.array([[0.3, -0.7], [0.2, 0.5]])
    h = FunctionHandle(
        "exp_lin",
        shape,
        value=lambda x: np.exp(np.einsum("ij,...ij->...", ell, x)),
        gradient=lambda x: np.exp(np.einsum("ij,...ij->...", ell, x))[..., None, None] * ell,
    )

    def interior_error(points):
        # max over a resolution-independent inner region, so both grids see the
        # same third-derivative scale
        spec = grid_spec(shape, 0.5, points, "cube")
        fld = sample(h, spec)
        comps = gradient_field(fld)
        coords = fld.node_coords()
        exact = h.gradient_at_coords(coords).reshape(coords.shape[0], -1)
        inner = np.max(np.abs(coords), axis=1) <= 0.25 + 1e-12
        err = 0.0
        for k, comp in enumerate(comps):
            err = max(err, float(np.max(np.abs(comp.values[inner] - exact[inner, k]))))
        return err

    ratio = interior_error(5) / interior_error(9)
    assert 3.5 <= ratio <= 4.5


def test_polynomial_gradients_centrally_exact():
    # central differences of (multi)linear and quadratic handles carry no
    # truncation error, so sampled gradients match the exact gradient to roundoff
    from roconvex.corpus import neg_half_norm_sq, neg_uv

    for h in (half_norm_sq(2.0), neg_half_norm_sq(), neg_det(), neg_uv()):
        spec = grid_spec(h.shape, 1.0, 5, "cube")
        comps = gradient_field(sample(h, spec))
        coords = comps[0].node_coords()
        exact = h.gradient_at_coords(coords)
        for k, (i, j) in enumerate(h.shape.coord_pairs()):
            c = comps[k]
            assert np.allclose(c.values[c.mask], exact[c.mask, i, j], atol=1e-12), h.name


def test_corpus_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for h in corpus():
        if h.gradient is None:
            continue
        pts = rng.uniform(-0.9, 0.9, size=(20, h.shape.dim))
        mats = h.shape.coords_to_matrix(pts)
        # keep clear of kink hyperplanes where the gradient jumps
        if h.name in ("frob_norm", "abs_x11", "abs_det_2x2", "max_linear_3"):
            pts = pts[np.all(np.abs(pts) > 0.05, axis=1)]
            mats = h.shape.coords_to_matrix(pts)
        exact = h.gradient(mats)
        approx = h.fd_gradient(mats, h=1e-6)
        scale = np.maximum(1.0, np.abs(exact))
        mism = np.abs(exact - approx) / scale
        if h.name in ("frob_norm", "abs_x11", "abs_det_2x2", "max_linear_3"):
            # a kink crossing within the difference step inflates isolated entries
            assert float(np.median(np.max(mism, axis=(-2, -1)))) < 1e-7, h.name
        else:
            assert float(np.max(mism)) < 1e-7, h.name


def test_interpolation_exact_for_multilinear():
    shape = MatrixShape(1, 2)
    h = FunctionHandle("bilinear", shape, lambda x: 2.0 + x[..., 0, 0] * x[..., 0, 1])
    fld = sample(h, grid_spec(shape, 1.0, 5, "cube"))
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.99, 0.99, size=(50, 2))
    vals, ok = fld.interpolate(pts)
    assert ok.all()
    assert np.allclose(vals, h.value_at_coords(pts), atol=1e-13)


def test_interpolation_flags_outside_and_masked():
    shape = MatrixShape(1, 2)
    fld = sample(half_norm_sq(1.0, shape), grid_spec(shape, 1.0, 3, "ball"))
    vals, ok = fld.interpolate(np.array([[2.0, 0.0], [0.9, 0.9]]))
    assert not ok[0]  # outside the cube
    assert not ok[1]  # cell corner masked out by the ball clip
    assert np.isnan(vals[~ok]).all()


def test_ball_samples_inside():
    shape = MatrixShape(2, 2)
    rng = np.random.default_rng(3)
    pts = ball_samples(shape, np.zeros(4), 0.5, 200, rng)
    assert pts.shape == (200, 4)
    assert np.all(np.linalg.norm(pts, axis=1) <= 0.5 + 1e-12)


def test_ball_volume_closed_forms():
    assert ball_volume(1, 1.0) == pytest.approx(2.0)
    assert ball_volume(2, 1.0) == pytest.approx(np.pi)
    assert ball_volume(3, 2.0) == pytest.approx(4.0 / 3.0 * np.pi * 8.0)


def test_rank_one_directions():
    shape = MatrixShape(2, 2)
    dirs = coordinate_directions(shape)
    assert len(dirs) == 4
    for d in dirs:
        assert np.linalg.matrix_rank(d.matrix) == 1
    sym = MatrixShape(2, 2, symmetric=True)
    sdirs = coordinate_directions(sym)
    labels = {d.label() for d in sdirs}
    assert labels == {"r_11", "r_12", "r_22"}
    r12 = next(d for d in sdirs if d.label() == "r_12")
    assert np.array_equal(r12.matrix, np.ones((2, 2)))
    r11 = next(d for d in sdirs if d.label() == "r_11")
    assert np.array_equal(r11.matrix, np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        RankOneDirection(shape, a=np.zeros(2), b=np.ones(2))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare, qmc

from oracles import star_discrepancy
from rpinn.mesh import RectDomain, barycentric, build_diagonal_mesh
from rpinn.problems import burgers, poisson_peak, wave
from rpinn.sampling import (
    CollocationSet,
    NoErrorSignal,
    RecadConfig,
    background_points,
    boundary_points,
    grid_points,
    probe_grid,
    read_points_csv,
    recad,
    recad_counts,
    residual_pdf_sample,
    sobol_2d,
    write_points_csv,
)

# first eight points after the origin, from the direction numbers
# (dim 1: m = 1, 1, 1, ...; dim 2: m = 1, 3, 5, ...)
SOBOL_FIRST_8 = np.array([
    [0.5, 0.5],
    [0.75, 0.25],
    [0.25, 0.75],
    [0.375, 0.375],
    [0.875, 0.875],
    [0.625, 0.125],
    [0.125, 0.625],
    [0.1875, 0.3125],
])


def test_sobol_first_points():
    np.testing.assert_array_equal(sobol_2d(8), SOBOL_FIRST_8)


def test_sobol_matches_scipy():
    ref = qmc.Sobol(2, scramble=False).random_base2(11)
    np.testing.assert_array_equal(sobol_2d(2047), ref[1:])
    np.testing.assert_array_equal(sobol_2d(2048, skip=0), ref)


def test_sobol_empty():
    assert sobol_2d(0).shape == (0, 2)


def test_sobol_beats_random_discrepancy():
    d_sobol = star_discrepancy(sobol_2d(1024))
    for seed in range(10):
        assert d_sobol < star_discrepancy(np.random.default_rng(seed).random((1024, 2)))


def test_background_samplers_in_domain():
    dom = RectDomain((-1.0, 0.0), (1.0, 1.0))
    for method in ("sobol", "random", "grid"):
        pts = background_points(dom, 100, method, rng=np.random.default_rng(0))
        assert pts.shape == (100, 2)
        assert np.all(dom.contains(pts))
    assert grid_points(9).shape == (9, 2)
    with pytest.raises(ValueError):
        background_points(dom, 10, "halton")


def test_recad_worked_examples():
    assert recad_counts([4, 3, 2, 1], 10, 0.5).tolist() == [6, 4, 0, 0]
    assert recad_counts([1, 1, 1, 1], 8, 0.5).tolist() == [4, 4, 0, 0]
    # the same allocation is reported in element order when eta is unsorted
    assert recad_counts([2, 4, 1, 3], 10, 0.5).tolist() == [0, 6, 0, 4]


def test_recad_zero_budget(unit_square):
    m = build_diagonal_mesh(unit_square, 2, 2)
    counts, pts = recad(np.ones(8), m, RecadConfig(0, 0.5), np.random.default_rng(0))
    assert counts.sum() == 0
    assert pts.shape == (0, 2)


def test_recad_rejects_bad_input():
    with pytest.raises(NoErrorSignal):
        recad_counts(np.zeros(10), 5, 0.5)
    with pytest.raises(ValueError):
        recad_counts(np.ones(10), 5, 0.05)  # eps <= 1/N_e
    with pytest.raises(ValueError):
        recad_counts(np.ones(10), 5, 1.0)
    with pytest.raises(ValueError):
        recad_counts(np.array([1.0, np.nan, 1.0]), 5, 0.5)


def _check_recad(eta, n2, eps):
    counts = recad_counts(eta, n2, eps)
    assert counts.sum() == n2
    assert np.all(counts >= 0)
    order = np.argsort(-np.asarray(eta), kind="stable")
    assert np.all(np.diff(counts[order]) <= 0)
    assert counts[order[0]] == counts.max()


@settings(max_examples=300, deadline=None)
@given(
    n_e=st.integers(2, 400),
    n2=st.integers(0, 2000),
    frac=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**31 - 1),
    ties=st.booleans(),
)
def test_recad_properties(n_e, n2, frac, seed, ties):
    rng = np.random.default_rng(seed)
    eta = rng.integers(0, 4, n_e).astype(float) if ties else rng.exponential(size=n_e)
    if not eta.any():
        eta[0] = 1.0
    lo = 1.0 / n_e
    eps = lo + (1.0 - lo) * (0.001 + 0.998 * frac)
    _check_recad(eta, n2, eps)


def test_recad_points_inside_assigned_triangles():
    m = build_diagonal_mesh(RectDomain((0.0, -5.0), (6.0, 5.0)), 10, 10)
    eta = np.random.default_rng(1).random(m.n_triangles)
    counts, pts = recad(eta, m, RecadConfig(300, 0.1), np.random.default_rng(2))
    tri = np.repeat(np.arange(m.n_triangles), counts)
    assert len(pts) == 300
    bary = barycentric(m, tri, pts)
    assert np.all(bary >= -1e-12)


def test_recad_deterministic(unit_square):
    m = build_diagonal_mesh(unit_square, 10, 10)
    eta = np.random.default_rng(3).random(m.n_triangles)
    a = recad(eta, m, RecadConfig(100, 0.02), np.random.default_rng(9))
    b = recad(eta, m, RecadConfig(100, 0.02), np.random.default_rng(9))
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_recad_config_validation():
    with pytest.raises(ValueError):
        RecadConfig(10, 0.0)
    with pytest.raises(ValueError):
        RecadConfig(-1, 0.5)
    RecadConfig(100, 0.02).validate_for(5000)
    with pytest.raises(ValueError):
        RecadConfig(100, 0.02).validate_for(50)


def test_residual_sampler_concentrates(unit_square):
    r = np.zeros(100)
    r[37] = 5.0
    pts = residual_pdf_sample(r, unit_square, 10, 10, 500, np.random.default_rng(0))
    assert np.all((pts[:, 0] >= 0.7) & (pts[:, 0] <= 0.8) & (pts[:, 1] >= 0.3) & (pts[:, 1] <= 0.4))


def test_residual_sampler_uniform_for_constant(unit_square):
    pts = residual_pdf_sample(np.full(16, 2.0), unit_square, 4, 4, 10_000, np.random.default_rng(1))
    cells = np.floor(pts[:, 0] * 4).astype(int) + 4 * np.floor(pts[:, 1] * 4).astype(int)
    assert chisquare(np.bincount(cells, minlength=16)).pvalue > 0.01
    zero = residual_pdf_sample(np.zeros(16), unit_square, 4, 4, 100, np.random.default_rng(1))
    assert zero.shape == (100, 2)
    assert residual_pdf_sample(np.ones(16), unit_square, 4, 4, 0, np.random.default_rng(1)).shape == (0, 2)


def test_probe_grid(unit_square):
    g = probe_grid(unit_square, 2, 3)
    assert g.shape == (6, 2)
    np.testing.assert_allclose(g[0], [0.25, 1 / 6])


def test_boundary_points_unit_square():
    b = boundary_points(poisson_peak(), 200)
    assert np.bincount(b.constraint_ids).tolist() == [50, 50, 50, 50]
    p = b.points
    on_edge = (np.isclose(p[:, 0], 0) | np.isclose(p[:, 0], 1) | np.isclose(p[:, 1], 0) | np.isclose(p[:, 1], 1))
    assert np.all(on_edge)
    assert len(np.unique(p, axis=0)) == 200


def test_boundary_points_burgers():
    prob = burgers()
    b = boundary_points(prob, 200)
    names = [prob.constraints[i].name for i in b.constraint_ids]
    assert names.count("dirichlet x=-1") == 50
    assert names.count("dirichlet x=1") == 50
    assert names.count("initial value") == 100
    init = b.points[b.constraint_ids == 2]
    assert np.all(init[:, 1] == 0.0)


def test_boundary_points_wave_duplicates_initial_line():
    prob = wave()
    b = boundary_points(prob, 200)
    value = b.points[b.constraint_ids == 0]
    velocity = b.points[b.constraint_ids == 1]
    assert np.array_equal(value, velocity)
    assert np.all(value[:, 0] == 0.0)
    assert len(np.unique(b.points, axis=0)) == 200


def test_point_dump_round_trip(tmp_path):
    prob = poisson_peak()
    c = CollocationSet(sobol_2d(10), boundary_points(prob, 8), np.full((3, 2), 0.5))
    path = write_points_csv(tmp_path / "p.csv", 2, c)
    back = read_points_csv(path)
    assert np.array_equal(back["background"], c.background)
    assert np.array_equal(back["adaptive"], c.adaptive)
    assert len(back["boundary"]) == 8
    assert path.read_text().splitlines()[1].startswith("2,background,")

"""Variational grids, greatest-minimizer solves, and x-scans."""

import numpy as np
import pytest

from randflux import (
    FluxSpec,
    ProcessSpec,
    build_grid,
    make_sample_path,
    sample_path_from_callables,
    scan_x,
    solve_path,
    solve_power_law,
)


# ---------------------------------------------------------------------------
# grids


def test_grid_points_abs_flux(abs_flux):
    grid = build_grid(abs_flux, 0.0, 1.0, 3)
    np.testing.assert_array_equal(grid.points, [-1.0, -0.5, 0.0, 0.5, 1.0])
    np.testing.assert_array_equal(grid.is_vertex, [True, False, False, False, True])
    np.testing.assert_array_equal(grid.vertex_positions(), [-1.0, 1.0])
    assert grid.n == 3 and grid.n_vertices == 2 and grid.n_segments == 1
    assert grid.interval == (-1.0, 1.0)
    # L = 0 on its support, so the deterministic shift vanishes
    np.testing.assert_array_equal(grid.shift, np.zeros(5))


def test_grid_window_tracks_x_and_t(abs_flux):
    grid = build_grid(abs_flux, 0.3, 0.5, 1)
    assert grid.interval == pytest.approx((-0.2, 0.8))


def test_grid_q_exact_at_vertices(three_slope_flux):
    # vertex q-values are the knots themselves, not recomputed from y
    grid = build_grid(three_slope_flux, 0.37, 0.73, (2, 3))
    knots = np.asarray(grid.transform.knots)
    np.testing.assert_array_equal(np.sort(grid.q[grid.is_vertex]), knots)


def test_grid_segment_layout(three_slope_flux):
    grid = build_grid(three_slope_flux, 0.0, 1.0, (2, 3))
    assert grid.n == 5 and grid.n_vertices == 3 and grid.n_segments == 2
    # ascending y reverses the knot intervals of L, so slopes come reversed
    np.testing.assert_array_equal(grid.segment_slope, [0.5, -0.5])
    np.testing.assert_array_equal(grid.drift, [-0.5, 0.5])
    assert np.all(np.diff(grid.points) > 0)
    # interior rows carry their segment, vertex rows their vertex number
    np.testing.assert_array_equal(grid.point_index[grid.is_vertex], [0, 1, 2])
    np.testing.assert_array_equal(grid.point_index[~grid.is_vertex], [0, 0, 1, 1, 1])


def test_grid_rejections(abs_flux):
    with pytest.raises(ValueError, match="unbounded support"):
        build_grid(FluxSpec.power_law(2.0), 0.0, 1.0, 4)
    with pytest.raises(ValueError, match="time must be positive"):
        build_grid(abs_flux, 0.0, 0.0, 4)
    with pytest.raises(ValueError, match="interior counts"):
        build_grid(abs_flux, 0.0, 1.0, (2, 2))
    with pytest.raises(ValueError, match="at least one interior point"):
        build_grid(abs_flux, 0.0, 1.0, 0)


def test_sample_path_shape_guard(abs_flux):
    grid = build_grid(abs_flux, 0.0, 1.0, 3)
    with pytest.raises(ValueError, match="match the grid point count"):
        make_sample_path(grid, np.zeros(4), np.zeros(4))


def test_objective_adds_shift(three_slope_flux):
    grid = build_grid(three_slope_flux, 0.1, 0.9, 2)
    path = sample_path_from_callables(grid, lambda y: y**2, lambda y: 2 * y)
    np.testing.assert_allclose(path.objective, grid.points**2 + grid.shift)


# ---------------------------------------------------------------------------
# single solves


def test_vertex_minimizer_reads_gprime(abs_flux):
    grid = build_grid(abs_flux, 0.0, 1.0, 3)
    path = make_sample_path(grid, [2.0, 3.0, 4.0, 3.0, 5.0], [7.0, 0, 0, 0, -7.0])
    res = solve_path(grid, path)
    assert res.location.kind == "vertex" and res.location.vertex == 0
    assert res.y_star == -1.0
    assert res.w == 7.0
    assert res.location.label() == "V0"


def test_interior_minimizer_reads_segment_slope(three_slope_flux):
    grid = build_grid(three_slope_flux, 0.0, 1.0, 2)
    g = np.full(7, 9.0)   # 3 vertices + 2 interior points per segment
    k = np.flatnonzero(~grid.is_vertex)[0]  # first interior point, segment 0
    g[k] = -1.0
    res = solve_path(grid, make_sample_path(grid, g - grid.shift, np.zeros(7)))
    assert res.location.kind == "interior" and res.location.segment == 0
    assert res.w == 0.5
    assert res.location.label() == "S0"


def test_exact_tie_takes_greatest_y(abs_flux):
    grid = build_grid(abs_flux, 0.0, 1.0, 3)
    path = make_sample_path(grid, [5.0, 3.0, 4.0, 3.0, 5.0], np.zeros(5))
    res = solve_path(grid, path)
    assert res.y_star == 0.5
    assert res.location.kind == "interior"
    # both sides of the tie are interior, so the one-sided values agree
    assert res.w == res.w_left == 0.0


def test_vertex_interior_tie_is_coincident(abs_flux):
    grid = build_grid(abs_flux, 0.0, 1.0, 3)
    path = make_sample_path(grid, [3.0, 4.0, 4.0, 3.0, 5.0], [1.5, 0, 0, 0, 0])
    res = solve_path(grid, path)
    assert res.location.kind == "coincident"
    assert res.location.label() == "C(S0,V0)"
    assert res.y_star == 0.5
    assert res.w == 0.0         # greatest minimizer is interior
    assert res.w_left == 1.5    # smallest is the vertex, so g' there


def test_solve_rejects_foreign_path(abs_flux, three_slope_flux):
    g1 = build_grid(abs_flux, 0.0, 1.0, 3)
    g2 = build_grid(three_slope_flux, 0.0, 1.0, 8)
    path = make_sample_path(g2, np.zeros(len(g2.points)), np.zeros(len(g2.points)))
    with pytest.raises(ValueError, match="length mismatch"):
        solve_path(g1, path)


def test_random_paths_obey_the_dichotomy(three_slope_flux, rng):
    """w is g' at a vertex and the segment slope in an interior, always."""
    grid = build_grid(three_slope_flux, 0.2, 0.7, 6)
    npts = len(grid.points)
    for _ in range(200):
        path = make_sample_path(grid, rng.standard_normal(npts), rng.standard_normal(npts))
        res = solve_path(grid, path)
        k = int(np.flatnonzero(grid.points == res.y_star)[0])
        assert grid.interval[0] <= res.y_star <= grid.interval[1]
        if res.location.kind == "vertex":
            assert res.w == path.gprime[k]
        elif res.location.kind == "interior":
            assert res.w == grid.segment_slope[grid.point_index[k]]
        assert res.q_value == pytest.approx(np.min(path.objective))


# ---------------------------------------------------------------------------
# power-law solves


def test_power_law_quadratic_argmin():
    # g = y^2/2 with H = p^2/2: stationarity gives y* = x/(1+t), w = y*
    flux = FluxSpec.power_law(2.0)
    x, t = 0.3, 0.8
    res = solve_power_law(flux, lambda y: y**2 / 2.0, x, t,
                          gprime_bound=2.0, n_points=8193)
    assert res.y_star == pytest.approx(x / (1 + t), abs=1e-3)
    assert res.w == pytest.approx((x - res.y_star) / t)
    assert not res.truncated


def test_power_law_cubic_solution_identity():
    flux = FluxSpec.power_law(3.0)
    res = solve_power_law(flux, np.cos, 0.5, 1.0, gprime_bound=1.0)
    q = (0.5 - res.y_star) / 1.0
    assert res.w == pytest.approx(np.sign(q) * abs(q) ** 0.5)


def test_power_law_truncation_flag():
    # g' = -5 never satisfies the claimed bound of 1; argmin hits the edge
    flux = FluxSpec.power_law(2.0)
    res = solve_power_law(flux, lambda y: -5.0 * y, 0.0, 1.0, gprime_bound=1.0)
    assert res.truncated
    ok = solve_power_law(flux, lambda y: -5.0 * y, 0.0, 1.0, gprime_bound=6.0)
    assert not ok.truncated
    assert ok.y_star == pytest.approx(5.0, abs=2e-2)


def test_power_law_input_guards(abs_flux):
    with pytest.raises(ValueError, match="needs a power-law flux"):
        solve_power_law(abs_flux, np.cos, 0.0, 1.0)
    with pytest.raises(ValueError, match="time must be positive"):
        solve_power_law(FluxSpec.power_law(2.0), np.cos, 0.0, -1.0)


# ---------------------------------------------------------------------------
# scans


def quadratic_scan(abs_flux, **kw):
    return scan_x(abs_flux, None, 0.5, (-2.0, 2.0), 0.05,
                  g_fn=lambda y: y**2, gprime_fn=lambda y: 2.0 * y, **kw)


def test_scan_quadratic_well_profile(abs_flux):
    """g = y^2: two moving-vertex fans around a flat interior plateau."""
    prof = quadratic_scan(abs_flux, n_i=99)
    x = prof.x
    exact = np.where(x < -0.5, 2.0 * (x + 0.5), np.where(x > 0.5, 2.0 * (x - 0.5), 0.0))
    assert np.max(np.abs(prof.w - exact)) < 0.06
    assert not prof.shock_flag.any()
    # greatest minimizer is nondecreasing along x on a fixed path
    # (up to float noise in the candidate positions)
    assert np.min(np.diff(prof.y_star)) >= -1e-12
    # left fan rides the right vertex, plateau is interior, right fan the left vertex
    assert prof.region[0] == "III" and prof.region[-1] == "I"
    assert prof.region[len(x) // 2] == "II"
    recorded = [tr for tr in prof.transition if tr]
    assert recorded == ["III->II", "II->I"]


def test_scan_double_well_shock(abs_flux):
    # equal wells at y = -1 and y = 1: the window [x-t, x+t] switches well
    # allegiance near x = 0 and the minimizer teleports across
    prof = scan_x(abs_flux, None, 0.5, (-1.2, 1.2), 0.02, n_i=24,
                  g_fn=lambda y: (y**2 - 1.0) ** 2,
                  gprime_fn=lambda y: 4.0 * y * (y**2 - 1.0))
    hits = np.flatnonzero(prof.shock_flag)
    assert len(hits) == 1
    k = int(hits[0])
    assert abs(prof.x[k]) <= 0.05
    assert prof.y_star[k] - prof.y_star[k - 1] > 0.9
    # entropy: the solution drops across the shock for a convex flux
    assert prof.w[k] < prof.w[k - 1] - 2.0
    # backward wiggles stay below one candidate spacing (2t/(n_i+1))
    assert np.min(np.diff(prof.y_star)) >= -(1.0 / 25.0 + 1e-12)


def test_scan_monotone_data_never_shocks(three_slope_flux):
    prof = scan_x(three_slope_flux, None, 1.0, (-1.0, 1.0), 0.05, n_i=12,
                  g_fn=lambda y: np.cosh(y), gprime_fn=np.sinh)
    assert not prof.shock_flag.any()
    # candidate spacing is (knot width * t)/(n_i + 1) = 1/13 here
    assert np.min(np.diff(prof.y_star)) >= -(1.0 / 13.0 + 1e-12)
    # polygonal fluxes report raw location labels, not fan regions
    assert all(r[0] in "SVC" for r in prof.region)


def test_scan_sampled_path_is_coherent_and_reproducible(abs_flux, bm):
    a = scan_x(abs_flux, bm, 0.7, (-1.0, 1.0), 0.1, n_i=8,
               rng=np.random.default_rng(42))
    b = scan_x(abs_flux, bm, 0.7, (-1.0, 1.0), 0.1, n_i=8,
               rng=np.random.default_rng(42))
    np.testing.assert_array_equal(a.w, b.w)
    np.testing.assert_array_equal(a.y_star, b.y_star)
    assert a.region == b.region
    rows = list(a.rows())
    assert len(rows) == len(a.x)
    assert set(rows[0]) == {
        "x", "w", "y_star", "location_class", "segment_index",
        "vertex_index", "region", "shock_flag", "region_transition",
    }


def test_scan_accepts_a_covering_path(abs_flux):
    t, dx, n_i = 0.5, 0.25, 4
    xs = np.arange(-1.0, 1.0 + dx / 2, dx)
    union = np.unique(np.concatenate(
        [build_grid(abs_flux, float(xv), t, n_i).points for xv in xs]
    ))
    supplied = scan_x(abs_flux, None, t, (-1.0, 1.0), dx, n_i=n_i,
                      path=(union, union**2, 2.0 * union))
    direct = quadratic_scan(abs_flux)  # different x-grid; rebuild matching one
    direct = scan_x(abs_flux, None, t, (-1.0, 1.0), dx, n_i=n_i,
                    g_fn=lambda y: y**2, gprime_fn=lambda y: 2.0 * y)
    np.testing.assert_array_equal(supplied.w, direct.w)
    np.testing.assert_array_equal(supplied.y_star, direct.y_star)


def test_scan_path_must_cover_candidates(abs_flux):
    pts = np.linspace(-1.0, 1.0, 7)   # misses almost every candidate
    with pytest.raises(ValueError, match="does not cover"):
        scan_x(abs_flux, None, 0.5, (-1.0, 1.0), 0.25, n_i=4,
               path=(pts, pts**2, 2 * pts))


def test_scan_source_validation(abs_flux, bm):
    with pytest.raises(ValueError, match="dx must be positive"):
        scan_x(abs_flux, bm, 0.5, (-1.0, 1.0), 0.0, rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="exactly one of"):
        scan_x(abs_flux, bm, 0.5, (-1.0, 1.0), 0.1)
    with pytest.raises(ValueError, match="exactly one of"):
        scan_x(abs_flux, bm, 0.5, (-1.0, 1.0), 0.1,
               rng=np.random.default_rng(0), g_fn=lambda y: y)
    with pytest.raises(ValueError, match="matching gprime_fn"):
        scan_x(abs_flux, None, 0.5, (-1.0, 1.0), 0.1, g_fn=lambda y: y)
    with pytest.raises(ValueError, match="requires a process spec"):
        scan_x(abs_flux, None, 0.5, (-1.0, 1.0), 0.1, rng=np.random.default_rng(0))


def test_scan_w_jump_tol_is_an_independent_detector(abs_flux):
    # suppress the minimizer-jump rule entirely; the double-well shock has
    # |dw| about 3 at its class change, so the w rule alone must catch it
    kw = dict(n_i=24, g_fn=lambda y: (y**2 - 1.0) ** 2,
              gprime_fn=lambda y: 4.0 * y * (y**2 - 1.0))
    silent = scan_x(abs_flux, None, 0.5, (-1.2, 1.2), 0.02,
                    y_jump_tol=10.0, **kw)
    assert silent.shock_flag.sum() == 0
    wrule = scan_x(abs_flux, None, 0.5, (-1.2, 1.2), 0.02,
                   y_jump_tol=10.0, w_jump_tol=1.0, **kw)
    hits = np.flatnonzero(wrule.shock_flag)
    assert len(hits) == 1
    assert abs(wrule.x[int(hits[0])]) <= 0.05

import math
import re

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from anosovlab import splitting2 as sp
from anosovlab.manifolds import (
    ManifoldError, ManifoldRequest, Polyline, figure_csv, figure_field, figure_svg, grid_bases,
    grow_manifold, point_at_arclength, points_at_arclength, project_onto, split_wrapped,
)
from anosovlab.torus import apply_map, lift_map, orbit, torus_distance

SLOPE_U = (math.sqrt(5) - 1) / 2


@pytest.fixture(scope="module")
def pert_leaves():
    from anosovlab.torus import perturbed_cat_map
    spec = perturbed_cat_map(0.05)
    base = np.array([0.3, 0.6])
    return spec, {k: grow_manifold(spec, ManifoldRequest(base, k, 0.1, 1e-3)) for k in ("unstable", "stable")}


def test_request_validation():
    with pytest.raises(ValueError):
        ManifoldRequest((0, 0), "sideways")
    with pytest.raises(ValueError):
        ManifoldRequest((0, 0), half_length=0.1, step=0.2)
    with pytest.raises(ValueError):
        ManifoldRequest((0, 0), half_length=0.7)


def test_linear_leaf_is_eigenline(cat):
    poly = grow_manifold(cat, ManifoldRequest((0.2, 0.7), "unstable", 0.2, 2e-3))
    rel = poly.points - poly.base
    normal = np.array([-SLOPE_U, 1.0]) / math.hypot(SLOPE_U, 1.0)
    assert np.max(np.abs(rel @ normal)) < 1e-9


def test_stable_is_unstable_of_inverse(pert):
    req = ManifoldRequest((0.4, 0.1), "stable", 0.1, 2e-3)
    a = grow_manifold(pert, req)
    b = grow_manifold(pert.inverse(), ManifoldRequest((0.4, 0.1), "unstable", 0.1, 2e-3))
    assert np.max(np.abs(a.points - b.points)) < 1e-9


def test_stable_points_approach_base_orbit(pert_leaves):
    spec, leaves = pert_leaves
    poly = leaves["stable"]
    pts = poly.wrapped[::10]
    xs = orbit(spec, poly.base, 10)
    ys = orbit(spec, pts, 10)
    d = torus_distance(ys, xs[:, None, :])
    far = d[0] > 0
    assert np.all(np.diff(d[:, far], axis=0) < 0)


def test_spacing_and_monotone_arclength(pert_leaves):
    _, leaves = pert_leaves
    for poly in leaves.values():
        gaps = np.linalg.norm(np.diff(poly.points, axis=0), axis=1)
        assert np.all(np.diff(poly.arclength) > 0)
        assert np.all((gaps >= 0.5 * poly.step) & (gaps <= 2 * poly.step))
        assert poly.half_length == pytest.approx(0.1)
        assert not poly.self_intersects


def test_tangency(pert_leaves):
    spec, leaves = pert_leaves
    base = leaves["unstable"].base
    assert sp.line_angle(leaves["unstable"].tangent(), sp.unstable_direction(spec, base)) < 1e-6
    assert sp.line_angle(leaves["stable"].tangent(), sp.stable_direction(spec, base)) < 1e-6


def test_unstable_leaf_invariance(pert_leaves):
    spec, leaves = pert_leaves
    poly = leaves["unstable"]
    img = apply_map(spec, poly.wrapped[::5])
    target = grow_manifold(spec, ManifoldRequest(apply_map(spec, poly.base), "unstable", 0.35, 1e-3))
    err = max(float(torus_distance(project_onto(target, q)[0], q)) for q in img)
    assert err < 1e-6


def test_stable_leaf_contraction(pert_leaves):
    spec, leaves = pert_leaves
    lam = sp.finite_time_rates(spec).lambda_hat
    pts = leaves["stable"].points
    d0 = pdist(pts).max()
    for n in range(1, 11):
        pts = lift_map(spec, pts)
        assert pdist(pts).max() <= d0 * lam ** n * 1.1


def test_point_at_arclength(cat, pert_leaves):
    _, leaves = pert_leaves
    poly = leaves["unstable"]
    np.testing.assert_array_equal(point_at_arclength(poly, 0.0), poly.base)
    with pytest.raises(ValueError):
        point_at_arclength(poly, 0.2)
    ts = np.linspace(-0.09, 0.09, 37)
    pts = points_at_arclength(poly, ts)
    for i in range(len(ts) - 1):
        assert torus_distance(pts[i], pts[i + 1]) <= ts[i + 1] - ts[i] + 1e-15

    line = grow_manifold(cat, ManifoldRequest((0.5, 0.5), "unstable", 0.1, 1e-3))
    e = sp.unstable_direction(cat, (0.5, 0.5))
    for t in (-0.07, 0.033):
        assert torus_distance(point_at_arclength(line, t), (0.5, 0.5) + t * e) < 1e-12


def test_linear_figure_two_parallel_families(cat):
    entries = figure_field(cat, grid_bases(3), half_length=0.1, step=5e-3, depth=20)
    assert len(entries) == 18 and all(e.error is None for e in entries)
    eu = sp.direction_from_slope(SLOPE_U)
    es = sp.direction_from_slope(-(math.sqrt(5) + 1) / 2)
    for e in entries:
        t = e.polyline.tangent()
        assert sp.line_angle(t, eu if e.kind == "unstable" else es) < 1e-9


def test_single_base_crosses_at_base(pert):
    entries = figure_field(pert, [(0.25, 0.75)], half_length=0.1, step=5e-3)
    assert [e.kind for e in entries] == ["unstable", "stable"]
    np.testing.assert_array_equal(entries[0].polyline.base, entries[1].polyline.base)


def test_transversal_at_every_base(pert):
    entries = figure_field(pert, grid_bases(3), half_length=0.1, step=5e-3)
    for i in range(9):
        u, s = (e.polyline for e in entries if e.base_index == i)
        assert sp.line_angle(u.tangent(), s.tangent()) > math.radians(10)


def test_failures_are_collected(pert):
    entries = figure_field(pert, [(0.1, 0.1)], half_length=0.2, step=5e-3, depth=1)
    assert all(e.polyline is None and "half_length" in e.error for e in entries)
    assert ":error:" in figure_csv(entries)
    with pytest.raises(ManifoldError):
        grow_manifold(pert, ManifoldRequest((0.1, 0.1), "unstable", 0.2, 5e-3, depth=1))


def test_split_wrapped_inserts_crossings():
    pts = np.array([[0.9, 0.5], [1.1, 0.5], [1.2, 0.5]])
    pieces = split_wrapped(pts)
    assert len(pieces) == 2
    np.testing.assert_allclose(pieces[0][-1], [1.0, 0.5])
    np.testing.assert_allclose(pieces[1][0], [0.0, 0.5])


def test_svg_and_csv(pert):
    entries = figure_field(pert, [(0.5, 0.5)], half_length=0.05, step=5e-3)
    svg = figure_svg(entries)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert len(re.findall(r'stroke="blue"', svg)) >= 1 and len(re.findall(r'stroke="red"', svg)) >= 1
    text = figure_csv(entries)
    lines = text.splitlines()
    assert lines[0] == "base_index,kind,t,x,y"
    assert len(lines) == 1 + sum(len(e.polyline.points) for e in entries)


def test_project_onto_recovers_vertices(pert_leaves):
    _, leaves = pert_leaves
    poly = leaves["stable"]
    p, s = project_onto(poly, poly.wrapped[7])
    assert s == pytest.approx(poly.arclength[7], abs=1e-15)
    assert torus_distance(p, poly.wrapped[7]) < 1e-15


def test_polyline_wraps():
    poly = Polyline(np.array([[0.99, 0.5], [1.0, 0.5], [1.01, 0.5]]), np.array([-0.01, 0.0, 0.01]), 1, "unstable", 0.01)
    assert np.all((poly.wrapped >= 0) & (poly.wrapped < 1))

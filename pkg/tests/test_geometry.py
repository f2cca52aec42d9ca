import math

import numpy as np
import pytest

from anomalykit.geometry import (GeometryError, Grid, Inclusion, build_grid,
                                 corner_from_edges, corner_from_polygon,
                                 octant_corner, probe_direction, sector_corner)


def test_grid_spacing_and_nodes():
    g = build_grid(33, 17, (0.0, 2.0, -1.0, 1.0))
    assert g.hx == pytest.approx(2.0 / 32)
    assert g.hy == pytest.approx(2.0 / 16)
    X, Y = g.nodes()
    assert X.shape == (33, 17)
    assert X[0, 0] == 0.0 and X[-1, 0] == 2.0
    assert Y[0, 0] == -1.0 and Y[0, -1] == 1.0


def test_grid_rejects_tiny_resolution():
    with pytest.raises(GeometryError):
        build_grid(8, 64, (0.0, 1.0, 0.0, 1.0))


def test_grid_is_hashable_value_object():
    a = build_grid(32, 32, (0.0, 1.0, 0.0, 1.0))
    b = build_grid(32, 32, (0.0, 1.0, 0.0, 1.0))
    assert a == b and hash(a) == hash(b)
    assert {a: "ops"}[b] == "ops"


def test_node_volumes_sum_to_domain_area():
    g = build_grid(21, 33, (0.0, 2.0, 0.0, 3.0))
    assert g.node_volumes().sum() == pytest.approx(6.0)


def test_boundary_walk_is_closed_and_counterclockwise():
    g = build_grid(16, 16, (0.0, 1.0, 0.0, 1.0))
    idx = g.boundary_indices()
    assert len(idx) == 2 * (16 + 16) - 4
    assert idx[0] == (0, 0)
    # consecutive nodes are grid neighbors, no repeats
    seen = set()
    for k, (i, j) in enumerate(idx):
        assert (i, j) not in seen
        seen.add((i, j))
        ni, nj = idx[(k + 1) % len(idx)]
        assert abs(ni - i) + abs(nj - j) == 1
    # counterclockwise: first leg walks along the bottom edge
    assert idx[1] == (1, 0)


def test_boundary_normals_point_outward():
    g = build_grid(16, 16, (0.0, 1.0, 0.0, 1.0))
    pts = g.boundary_points()
    normals = g.boundary_normals()
    center = np.array([0.5, 0.5])
    for p, n in zip(pts, normals):
        assert np.dot(p - center, n) > 0
        assert np.linalg.norm(n) == pytest.approx(1.0)
    # corners get the diagonal direction
    assert normals[0] == pytest.approx((-1 / math.sqrt(2), -1 / math.sqrt(2)))


def test_circle_signed_distance_and_normal():
    inc = Inclusion.circle((0.3, 0.4), 0.2)
    assert inc.signed_distance(0.3, 0.4) == pytest.approx(-0.2)
    assert inc.signed_distance(0.3, 0.7) == pytest.approx(0.1)
    nx, ny, mag = inc.normal(np.asarray(0.5), np.asarray(0.4))
    assert (nx, ny) == pytest.approx((1.0, 0.0), abs=1e-6)
    assert mag == pytest.approx(1.0, abs=1e-6)


def test_polygon_signed_distance_square():
    sq = Inclusion.polygon(np.array([[0.0, 0.0], [1.0, 0.0],
                                     [1.0, 1.0], [0.0, 1.0]]))
    assert sq.signed_distance(0.5, 0.5) == pytest.approx(-0.5)
    assert sq.signed_distance(1.5, 0.5) == pytest.approx(0.5)
    assert sq.signed_distance(2.0, 2.0) == pytest.approx(math.sqrt(2))


def test_boundary_samples_lie_on_interface():
    inc = Inclusion.circle((0.0, 0.0), 0.5)
    pts = inc.boundary_samples(64)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert np.max(np.abs(r - 0.5)) < 1e-12


def test_project_to_interface_pulls_point_onto_circle():
    inc = Inclusion.circle((0.0, 0.0), 0.5)
    p = inc.project_to_interface(np.array([0.9, 0.1]))
    assert np.hypot(*p) == pytest.approx(0.5, abs=1e-8)


def test_sector_corner_geometry():
    c = sector_corner((0.2, -0.1), axis_angle=0.7, half_angle=math.pi / 6, h=0.5)
    assert c.dim == 2
    assert c.theta_c == pytest.approx(math.pi / 6)
    assert c.rho == pytest.approx(math.cos(math.pi / 6))
    # every sample sits inside the truncated cone
    pts = c.sample_points()
    rel = pts - np.asarray(c.apex)
    r = np.linalg.norm(rel, axis=-1)
    assert np.max(r) <= c.h + 1e-12
    axis = np.asarray(c.axis)
    mask = r > 1e-12
    cosang = (rel[mask] @ axis) / r[mask]
    assert np.min(cosang) >= math.cos(c.theta_c) - 1e-9


def test_corner_from_edges_matches_sector():
    apex = (0.0, 0.0)
    e1 = (math.cos(0.5), math.sin(0.5))
    e2 = (math.cos(-0.5), math.sin(-0.5))
    c = corner_from_edges(apex, [e1, e2], h=0.4)
    assert c.theta_c == pytest.approx(0.5)
    assert np.asarray(c.axis) == pytest.approx([1.0, 0.0])


def test_corner_from_polygon_vertex_angle():
    sq = Inclusion.polygon(np.array([[0.0, 0.0], [1.0, 0.0],
                                     [1.0, 1.0], [0.0, 1.0]]))
    c = corner_from_polygon(sq, 0)
    assert c.theta_c == pytest.approx(math.pi / 4)
    assert np.asarray(c.apex) == pytest.approx([0.0, 0.0])


def test_octant_corner_opening():
    oc = octant_corner((0.0, 0.0, 0.0), 0.7)
    assert oc.dim == 3
    # the diagonal axis makes the same angle with each coordinate edge
    assert oc.rho == pytest.approx(1 / math.sqrt(3))


def test_probe_direction_decay_condition():
    """xi . d <= -rho on every corner direction, which drives the decay."""
    for corner in (sector_corner((0.0, 0.0), 0.3, math.pi / 6, 0.5),
                   octant_corner((0.1, 0.2, -0.1), 0.6)):
        xi, xi_perp, rho = probe_direction(corner)
        assert np.dot(xi, xi_perp) == pytest.approx(0.0, abs=1e-12)
        assert np.linalg.norm(xi) == pytest.approx(1.0)
        dirs = corner.directions(40)
        proj = dirs @ xi
        assert np.max(proj) <= -rho + 1e-9


def test_star_inclusion_radius_modulation():
    inc = Inclusion.star((0.0, 0.0), np.array([0.3, 0.0, 0.05]))
    pts = inc.boundary_samples(128)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert r.min() > 0.2 and r.max() < 0.4
    assert inc.signed_distance(0.0, 0.0) < 0

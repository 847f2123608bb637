import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull as QHull

from pointvst.errors import DegenerateHullError
from pointvst.hull import convex_hull_3d


def check_hull(points, hull):
    assert hull.euler_characteristic() == 2
    assert hull.contains(points).all()
    # outward winding: the centroid of the vertices lies strictly inside every face
    c = points[hull.vertices].mean(axis=0)
    assert np.all(hull.normals @ c - hull.offsets < 0)
    # every face normal agrees with its cross product
    a, b, cc = (points[hull.faces[:, i]] for i in range(3))
    n = np.cross(b - a, cc - a)
    assert np.all(np.einsum("ij,ij->i", n, hull.normals) > 0)


def test_simplex():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    hull = convex_hull_3d(pts)
    assert hull.vertices.tolist() == [0, 1, 2, 3]
    assert len(hull.faces) == 4
    check_hull(pts, hull)


def test_cube_corners_plus_centroid():
    corners = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
    pts = np.vstack([corners, corners.mean(axis=0)])
    hull = convex_hull_3d(pts)
    assert hull.vertices.tolist() == list(range(8))
    check_hull(pts, hull)


def test_random_ball(rng):
    v = rng.normal(size=(200, 3))
    pts = v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(0, 1, (200, 1)) ** (1 / 3)
    hull = convex_hull_3d(pts)
    check_hull(pts, hull)


@pytest.mark.parametrize("seed", range(5))
def test_vertex_set_matches_qhull(seed):
    pts = np.random.default_rng(seed).normal(size=(300, 3))
    assert convex_hull_3d(pts).vertices.tolist() == sorted(QHull(pts).vertices.tolist())


def test_sphere_points_all_on_hull(rng):
    v = rng.normal(size=(500, 3))
    pts = v / np.linalg.norm(v, axis=1, keepdims=True)
    assert len(convex_hull_3d(pts).vertices) == 500


def test_coplanar_rejected(rng):
    pts = np.column_stack([rng.normal(size=(20, 2)), np.zeros(20)])
    with pytest.raises(DegenerateHullError):
        convex_hull_3d(pts)


def test_collinear_and_too_few_rejected():
    with pytest.raises(DegenerateHullError):
        convex_hull_3d(np.outer(np.arange(10.0), [1.0, 2.0, 3.0]))
    with pytest.raises(DegenerateHullError):
        convex_hull_3d(np.eye(3))


def test_grid_with_many_coplanar_points():
    # cube surface lattice: heavy coplanarity exercises the tolerance path
    g = np.linspace(-1, 1, 5)
    pts = np.array([p for p in itertools.product(g, g, g) if np.max(np.abs(p)) == 1.0])
    hull = convex_hull_3d(pts)
    check_hull(pts, hull)
    corners = {i for i, p in enumerate(pts) if np.all(np.abs(p) == 1.0)}
    assert corners <= set(hull.vertices.tolist())


@given(st.integers(0, 2**32 - 1), st.integers(4, 120))
def test_random_instances_satisfy_invariants(seed, n):
    pts = np.random.default_rng(seed).uniform(-1, 1, size=(n, 3))
    hull = convex_hull_3d(pts)
    check_hull(pts, hull)
    assert hull.vertices.tolist() == sorted(QHull(pts).vertices.tolist())

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpw_forge.errors import ContractError
from dpw_forge.mesh import (
    Mesh,
    boundary_vertices,
    cylinder_tube,
    export_mesh,
    flat_grid,
    icosphere,
    mean_curvature_estimate,
    mesh_diameter,
    polar_faces,
    read_obj,
    read_ply,
)


def test_sphere_curvature():
    H = mean_curvature_estimate(icosphere(4))
    assert np.all(np.isfinite(H))
    assert np.max(np.abs(H - 1)) <= 0.01


def test_flat_grid_curvature():
    H = mean_curvature_estimate(flat_grid(16))
    inner = np.isfinite(H)
    assert inner.sum() == 14 * 14
    assert np.max(np.abs(H[inner])) <= 1e-6


def test_cylinder_curvature():
    mesh = cylinder_tube(0.5, 2.0, 64, 32)
    H = mean_curvature_estimate(mesh)
    inner = np.isfinite(H)
    assert np.max(np.abs(np.abs(H[inner]) - 1)) <= 0.02


def test_boundary_and_polar_faces():
    faces = polar_faces(6, 3)
    assert faces.max() == 6 * 3
    b = boundary_vertices(faces, 19)
    assert b.sum() == 6 and not b[0]


def test_face_index_contract():
    with pytest.raises(ContractError):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))


def test_single_triangle_obj(tmp_path):
    tri = Mesh(np.eye(3), np.array([[0, 1, 2]]))
    p = export_mesh(tri, "obj", tmp_path / "t.obj")
    lines = p.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 3
    assert sum(l.startswith("f ") for l in lines) == 1
    with pytest.raises(ValueError):
        export_mesh(tri, "stl", tmp_path / "t.stl")


def test_round_trips(tmp_path):
    m = icosphere(2)
    m.H = mean_curvature_estimate(m)
    a = read_obj(export_mesh(m, "obj", tmp_path / "s.obj"))
    assert np.allclose(a.vertices, m.vertices, atol=1e-8) and np.array_equal(a.faces, m.faces)
    b = read_ply(export_mesh(m, "ply", tmp_path / "s.ply"))
    assert np.allclose(b.vertices, m.vertices, atol=1e-6) and np.array_equal(b.faces, m.faces)
    assert np.allclose(b.H, m.H, atol=1e-6)


def test_export_io_error(tmp_path):
    with pytest.raises(OSError):
        export_mesh(flat_grid(3), "obj", tmp_path / "missing" / "x.obj")


def test_diameter():
    assert mesh_diameter(icosphere(1).vertices) == pytest.approx(2.0)
    assert mesh_diameter(np.array([[np.nan, 0, 0], [0, 0, 0], [3, 4, 0]])) == pytest.approx(5.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 5.0))
def test_sphere_curvature_scales(r):
    H = mean_curvature_estimate(icosphere(3, r))
    assert np.max(np.abs(H * r - 1)) <= 0.02

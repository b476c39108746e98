import numpy as np
import pytest
from scipy import ndimage

from orbit_recon.errors import InsufficientData
from orbit_recon.meshing import (
    SdfGrid,
    TriangleMesh,
    chamfer_distance,
    color_vertices,
    export_mesh,
    import_mesh,
    marching_cubes,
    mesh_stats,
    nearest_vertex_distance,
    sample_grid,
)
from orbit_recon.neural import AnalyticField
from orbit_recon.scene.primitives import get_preset

TETRAHEDRON = TriangleMesh(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
)


@pytest.fixture(scope="module")
def sphere_mesh():
    grid = sample_grid(AnalyticField.sphere(0.5), 64)
    return grid, marching_cubes(grid)


def test_sphere_mesh_is_closed(sphere_mesh):
    _, mesh = sphere_mesh
    stats = mesh_stats(mesh)
    assert stats["watertight"]
    assert stats["euler_characteristic"] == 2
    np.testing.assert_allclose(stats["bbox_max"], 0.5, atol=0.01)


def test_sphere_vertices_on_isosurface(sphere_mesh):
    grid, mesh = sphere_mesh
    index = ((mesh.vertices - grid.lower) / grid.spacing).T
    interpolated = ndimage.map_coordinates(grid.values, index, order=1)
    assert np.abs(interpolated).max() < 1e-9
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5).max() < 2e-3


def test_sphere_normals_point_outward(sphere_mesh):
    _, mesh = sphere_mesh
    a, b, c = (mesh.vertices[mesh.faces[:, i]] for i in range(3))
    outward = np.einsum("ij,ij->i", mesh.face_cross(), (a + b + c) / 3)
    assert (outward > 0).mean() > 0.99


def test_sphere_chamfer():
    scene = get_preset("sphere")
    mesh = marching_cubes(sample_grid(scene.sdf, 64))
    mean, largest = chamfer_distance(mesh, scene, n_samples=5000)
    assert mean <= 0.01
    assert largest < 0.05


def test_torus_genus():
    mesh = marching_cubes(sample_grid(get_preset("torus").sdf, 64))
    stats = mesh_stats(mesh)
    assert stats["watertight"]
    assert stats["euler_characteristic"] == 0


def test_no_crossing_gives_empty_mesh():
    mesh = marching_cubes(SdfGrid(np.ones((4, 4, 4)), -1.0, 1.0))
    assert mesh.is_empty
    stats = mesh_stats(mesh)
    assert stats["faces"] == 0
    assert not stats["watertight"]


def test_sample_grid_resolution():
    calls = []

    def sdf(points):
        calls.append(len(points))
        return np.linalg.norm(points, axis=1) - 0.5

    grid = sample_grid(sdf, 2)
    assert grid.resolution == (2, 2, 2)
    assert calls == [8]
    np.testing.assert_allclose(grid.spacing, 2.0)
    with pytest.raises(ValueError, match="resolution must be >= 2"):
        sample_grid(sdf, 1)


def test_grid_validation():
    with pytest.raises(ValueError, match="finite"):
        SdfGrid(np.full((2, 2, 2), np.nan), -1.0, 1.0)
    with pytest.raises(ValueError, match="empty bounds"):
        SdfGrid(np.zeros((2, 2, 2)), 1.0, -1.0)


def test_tetrahedron_stats():
    stats = mesh_stats(TETRAHEDRON)
    assert stats == {
        "vertices": 4,
        "faces": 4,
        "edges": 6,
        "watertight": True,
        "euler_characteristic": 2,
        "bbox_min": [0.0, 0.0, 0.0],
        "bbox_max": [1.0, 1.0, 1.0],
    }


def test_face_index_validation():
    with pytest.raises(ValueError, match="out of range"):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_obj_file(tmp_path):
    path = export_mesh(TETRAHEDRON, tmp_path / "mesh.obj")
    assert path.read_text("utf8").splitlines()[-1] == "f 2 3 4"
    loaded = import_mesh(path)
    np.testing.assert_array_equal(loaded.vertices, TETRAHEDRON.vertices)
    np.testing.assert_array_equal(loaded.faces, TETRAHEDRON.faces)


def test_ply_file_keeps_colours(tmp_path):
    colored = TriangleMesh(TETRAHEDRON.vertices, TETRAHEDRON.faces, [[255, 0, 0]] * 4)
    path = export_mesh(colored, tmp_path / "mesh.ply")
    assert path.read_bytes().startswith(b"ply\nformat binary_little_endian 1.0\n")
    loaded = import_mesh(path)
    np.testing.assert_array_equal(loaded.faces, colored.faces)
    np.testing.assert_array_equal(loaded.colors, colored.colors)
    assert nearest_vertex_distance(loaded, colored) == 0.0


def test_unsupported_format(tmp_path):
    with pytest.raises(ValueError, match="unsupported mesh format 'stl'"):
        export_mesh(TETRAHEDRON, tmp_path / "mesh.stl")


def test_chamfer_validation():
    with pytest.raises(InsufficientData):
        chamfer_distance(TriangleMesh.empty(), TETRAHEDRON)
    with pytest.raises(ValueError, match="n_samples"):
        chamfer_distance(TETRAHEDRON, TETRAHEDRON, n_samples=50)
    assert chamfer_distance(TETRAHEDRON, TETRAHEDRON, n_samples=500)[0] < 1e-9


def test_color_vertices(sphere_mesh):
    _, mesh = sphere_mesh
    colored = color_vertices(AnalyticField.sphere(0.5, color=0.7), mesh)
    assert colored.colors.shape == (len(mesh.vertices), 3)
    assert set(np.unique(colored.colors)) <= {178, 179}

import numpy as np
import pytest

from mirecon.errors import MalformedFileError, ValidationError
from mirecon.geometry import OrientedPointSet, sample_surface
from mirecon.meshio import load_cloud, load_mesh, save_cloud, save_mesh, save_ply

CUBE_OBJ = """# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 4 8 7 3
f 1 5 8 4
f 2 3 7 6
"""


def test_minimal_obj(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    assert m.n_vertices == 3 and m.n_triangles == 1


def test_cube_obj_watertight(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    m = load_mesh(p, watertight=True)
    assert m.n_triangles == 12
    assert m.area() == pytest.approx(6.0)
    # quads are fanned with outward orientation kept
    assert np.allclose(m.face_normals()[0], [0, 0, -1])


def test_obj_zero_index(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
    with pytest.raises(MalformedFileError) as exc:
        load_mesh(p)
    assert exc.value.line == 4


def test_obj_negative_and_slash_indices(tmp_path):
    p = tmp_path / "neg.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3//1 -2//1 -1//1\n")
    assert load_mesh(p).triangles.tolist() == [[0, 1, 2]]


def test_obj_bad_vertex_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 zero 0\n")
    with pytest.raises(MalformedFileError, match=":2"):
        load_mesh(p)


def test_non_manifold_names_edge(tmp_path):
    p = tmp_path / "open.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\n")
    with pytest.raises(ValidationError, match="edge"):
        load_mesh(p, watertight=True)


@pytest.mark.parametrize("ext", [".obj", ".ply"])
def test_mesh_round_trip(tmp_path, torus, ext):
    p = tmp_path / ("m" + ext)
    save_mesh(p, torus)
    m = load_mesh(p, watertight=True)
    assert m.vertices.tobytes() == torus.vertices.tobytes()
    np.testing.assert_array_equal(m.triangles, torus.triangles)


def test_ascii_ply_round_trip(tmp_path, cube):
    p = tmp_path / "a.ply"
    save_ply(p, cube.vertices, cube.triangles, binary=False)
    m = load_mesh(p, watertight=True)
    np.testing.assert_array_equal(m.vertices, cube.vertices)


@pytest.mark.parametrize("ext", [".ply", ".xyz"])
def test_cloud_round_trip(tmp_path, sphere, ext):
    s = sample_surface(sphere, 200, seed=0)
    p = tmp_path / ("c" + ext)
    save_cloud(p, s)
    c = load_cloud(p)
    np.testing.assert_allclose(c.positions, s.positions, rtol=0, atol=0)
    np.testing.assert_allclose(c.normals, s.normals, atol=1e-15)


def test_cloud_without_normals(tmp_path):
    p = tmp_path / "c.xyz"
    np.savetxt(p, np.random.default_rng(0).random((10, 3)))
    assert load_cloud(p).normals is None
    save_cloud(tmp_path / "d.ply", OrientedPointSet(np.zeros((2, 3))))
    assert load_cloud(tmp_path / "d.ply").normals is None


def test_truncated_binary_ply(tmp_path, cube):
    p = tmp_path / "t.ply"
    save_ply(p, cube.vertices, cube.triangles)
    data = p.read_bytes()
    p.write_bytes(data[: len(data) - 40])
    with pytest.raises(MalformedFileError):
        load_mesh(p)


def test_ply_bad_magic(tmp_path):
    p = tmp_path / "x.ply"
    p.write_bytes(b"plx\nformat ascii 1.0\nend_header\n")
    with pytest.raises(MalformedFileError):
        load_mesh(p)


def test_xyz_wrong_columns(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("1 2 3 4\n")
    with pytest.raises(MalformedFileError, match="columns"):
        load_cloud(p)

import json

import numpy as np
import pytest

from jawdrive.geomcore import DegenerateTriangle
from jawdrive.rig import (
    BadRegionIndex,
    BlendshapeRig,
    DegenerateNeutralTriangle,
    RegionMask,
    TopologyMismatch,
    TriMesh,
    WeightLengthMismatch,
    apply_weights,
    deformation_gradient,
    export_obj,
    load_manifest,
    load_obj,
    save_manifest,
    synthetic_rig,
    triangle_frames,
)

from conftest import random_rotation

CANON = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])


def write_obj(path, verts, tris):
    lines = [f"v {x} {y} {z}" for x, y, z in verts] + [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in tris]
    path.write_text("\n".join(lines) + "\n")


def make_manifest(tmp_path, target_verts=None, target_tris=None, region="0\n1\n"):
    verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
    tris = [[0, 1, 2], [1, 3, 2]]
    write_obj(tmp_path / "neutral.obj", verts, tris)
    write_obj(tmp_path / "t.obj", verts if target_verts is None else target_verts, tris if target_tris is None else target_tris)
    (tmp_path / "region.txt").write_text(region)
    m = tmp_path / "rig.json"
    m.write_text(json.dumps({"neutral": "neutral.obj", "shapes": [{"name": "open", "path": "t.obj"}], "region": "region.txt"}))
    return m


def test_manifest_identical_target_gives_zero_delta(tmp_path):
    rig, mask = load_manifest(make_manifest(tmp_path))
    assert rig.names == ("open",) and not rig.deltas.any()
    assert mask.triangle_indices.tolist() == [0, 1]


def test_manifest_delta_is_subtraction(tmp_path):
    target = [[0, 0, 0.1], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
    rig, _ = load_manifest(make_manifest(tmp_path, target_verts=target))
    assert np.allclose(rig.deltas[0, 0], [0, 0, 0.1])
    assert not rig.deltas[0, 1:].any()


def test_manifest_topology_mismatch(tmp_path):
    with pytest.raises(TopologyMismatch):
        load_manifest(make_manifest(tmp_path, target_tris=[[0, 1, 2], [1, 3, 2], [0, 3, 2]]))


def test_manifest_bad_region(tmp_path):
    with pytest.raises(BadRegionIndex):
        load_manifest(make_manifest(tmp_path, region="0\n7\n"))
    with pytest.raises(BadRegionIndex):
        load_manifest(make_manifest(tmp_path, region="# nothing\n"))


def test_manifest_missing_file(tmp_path):
    m = make_manifest(tmp_path)
    (tmp_path / "t.obj").unlink()
    with pytest.raises(FileNotFoundError):
        load_manifest(m)


def test_manifest_degenerate_neutral(tmp_path):
    write_obj(tmp_path / "neutral.obj", [[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    write_obj(tmp_path / "t.obj", [[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    (tmp_path / "region.txt").write_text("0\n")
    (tmp_path / "rig.json").write_text(json.dumps({"neutral": "neutral.obj", "shapes": ["t.obj"], "region": "region.txt"}))
    with pytest.raises(DegenerateNeutralTriangle):
        load_manifest(tmp_path / "rig.json")


def test_save_manifest_roundtrip(tmp_path, wedge):
    rig, mask = wedge
    rig2, mask2 = load_manifest(save_manifest(tmp_path, rig, mask))
    assert rig2.names == rig.names
    assert np.abs(rig2.deltas - rig.deltas).max() < 1e-12
    assert np.array_equal(mask2.triangle_indices, mask.triangle_indices)


def test_region_sorted_unique():
    assert RegionMask([3, 1, 3, 2]).triangle_indices.tolist() == [1, 2, 3]


def test_trimesh_invariants():
    with pytest.raises(ValueError):
        TriMesh(CANON, [[0, 1, 3]])
    with pytest.raises(ValueError):
        TriMesh(CANON, [[0, 1, 1]])


def test_deformation_gradient_examples(rng):
    assert np.allclose(deformation_gradient(CANON, CANON), np.eye(3))
    r = random_rotation(rng)
    tri = rng.standard_normal((3, 3))
    assert np.abs(deformation_gradient(tri, tri @ r.T) - r).max() < 1e-9
    assert np.allclose(deformation_gradient(CANON, 2 * CANON), 2 * np.eye(3))


def test_deformation_gradient_degenerate():
    with pytest.raises(DegenerateTriangle):
        deformation_gradient(np.zeros((3, 3)), CANON)
    F = deformation_gradient(CANON, np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]))
    assert np.linalg.matrix_rank(F) < 3


def test_triangle_frames_matches_scalar(rng):
    from jawdrive.geomcore import triangle_frame

    corners = rng.standard_normal((20, 3, 3))
    batch = triangle_frames(corners)
    for c, f in zip(corners, batch):
        assert np.allclose(triangle_frame(*c), f, atol=1e-14)


def test_apply_weights(wedge, rng):
    rig, _ = wedge
    n = rig.neutral.vertices
    assert np.array_equal(apply_weights(rig, [0.0, 0.0]).vertices, n)
    for k in range(rig.num_shapes):
        e = np.eye(rig.num_shapes)[k]
        assert np.array_equal(apply_weights(rig, e).vertices, n + rig.deltas[k])
    w1, w2 = rng.uniform(size=2), rng.uniform(size=2)
    both = apply_weights(rig, w1 + w2).vertices
    parts = n + (apply_weights(rig, w1).vertices - n) + (apply_weights(rig, w2).vertices - n)
    assert np.abs(both - parts).max() < 1e-12
    with pytest.raises(WeightLengthMismatch):
        apply_weights(rig, [1.0])


def test_apply_weights_affine(rng):
    rig, _ = synthetic_rig(4, 20, seed=3)
    n = rig.neutral.vertices
    for _ in range(20):
        w, a = rng.standard_normal(4), rng.uniform(-3, 3)
        lhs = apply_weights(rig, a * w).vertices
        rhs = n + a * (apply_weights(rig, w).vertices - n)
        assert np.abs(lhs - rhs).max() < 1e-12


def test_wedge_gradients_affine_in_weights(wedge, rng):
    rig, mask = wedge

    def grads(w):
        mesh = apply_weights(rig, w)
        return np.array([deformation_gradient(rig.neutral.triangle(j), mesh.triangle(j)) for j in mask.triangle_indices])

    F0 = grads([0.0, 0.0])
    cols = [grads(np.eye(2)[k]) - F0 for k in range(2)]
    for _ in range(50):
        w = rng.uniform(-2, 2, 2)
        assert np.abs(grads(w) - F0 - (w[0] * cols[0] + w[1] * cols[1])).max() < 1e-8


def test_wedge_shapes(wedge):
    rig, mask = wedge
    assert rig.names == ("jaw_open", "jaw_side") and len(mask) == 8
    assert len(rig.neutral.triangles) > len(mask)


def test_export_obj_canonical(tmp_path):
    p = tmp_path / "tri.obj"
    export_obj(TriMesh(CANON, [[0, 1, 2]]), p)
    lines = p.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 3
    assert [l for l in lines if l.startswith("f ")] == ["f 1 2 3"]


def test_export_obj_roundtrip(tmp_path, rng):
    mesh = TriMesh(rng.standard_normal((10, 3)) * 1e3, [[0, 1, 2], [3, 4, 5], [6, 7, 9]])
    export_obj(mesh, tmp_path / "m.obj")
    back = load_obj(tmp_path / "m.obj")
    assert np.abs(back.vertices - mesh.vertices).max() < 1e-9
    assert np.array_equal(back.triangles, mesh.triangles)


def test_export_obj_empty(tmp_path):
    export_obj(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)), tmp_path / "e.obj")
    assert (tmp_path / "e.obj").read_text() == ""
    assert len(load_obj(tmp_path / "e.obj").vertices) == 0


def test_load_obj_ignores_extras_and_triangulates(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nf 1/1/1 2/2/1 3/3/1 4/4/1\n")
    mesh = load_obj(p)
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_rig_validation():
    mesh = TriMesh(CANON, [[0, 1, 2]])
    with pytest.raises(ValueError):
        BlendshapeRig(mesh, np.zeros((0, 3, 3)), ())
    with pytest.raises(ValueError):
        BlendshapeRig(mesh, np.zeros((1, 4, 3)), ("a",))
    with pytest.raises(ValueError):
        BlendshapeRig(mesh, np.full((1, 3, 3), np.nan), ("a",))


def test_shipped_wedge_manifest_matches_builtin(wedge):
    from pathlib import Path

    from jawdrive.rig import load_manifest

    rig, mask = load_manifest(Path(__file__).resolve().parents[1] / "data" / "wedge" / "manifest.json")
    assert np.array_equal(rig.neutral.vertices, wedge[0].neutral.vertices)
    # target meshes store neutral + delta, so deltas come back up to one rounding
    assert np.abs(rig.deltas - wedge[0].deltas).max() < 1e-15
    assert rig.names == wedge[0].names
    assert np.array_equal(mask.triangle_indices, wedge[1].triangle_indices)

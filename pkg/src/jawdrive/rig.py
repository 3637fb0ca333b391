"""Blendshape face rig: meshes, jaw-region masks, deformation gradients and file I/O.

Manifest files are JSON::

    {
      "neutral": "neutral.obj",
      "shapes": [{"name": "jaw_open", "path": "jaw_open.obj"}, "jaw_side.obj"],
      "region": "region.txt"
    }

Relative paths resolve against the manifest's directory. Shapes are absolute target
meshes sharing the neutral's triangle list; a bare string entry takes its name from
the file stem. The region file lists one triangle index per line (``#`` starts a
comment).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geomcore import DEGENERACY_EPS, DegenerateTriangle, triangle_frame


class RigLoadError(Exception):
    pass


class TopologyMismatch(RigLoadError):
    pass


class BadRegionIndex(RigLoadError):
    pass


class DegenerateNeutralTriangle(RigLoadError, DegenerateTriangle):
    pass


class WeightLengthMismatch(ValueError):
    pass


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (N, 3) float
    triangles: np.ndarray  # (M, 3) int, counter-clockwise

    def __post_init__(self) -> None:
        v = _frozen(self.vertices, float).reshape(-1, 3)
        t = _frozen(self.triangles, np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError("triangle with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def triangle(self, j: int) -> np.ndarray:
        """Corner positions of triangle ``j`` as a ``(3, 3)`` array, one vertex per row."""
        return self.vertices[self.triangles[j]]


@dataclass(frozen=True, eq=False)
class BlendshapeRig:
    neutral: TriMesh
    deltas: np.ndarray  # (K, N, 3)
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        d = _frozen(self.deltas, float)
        n = len(self.neutral.vertices)
        if d.ndim != 3 or d.shape[0] < 1 or d.shape[1:] != (n, 3):
            raise ValueError(f"deltas must have shape (K>=1, {n}, 3), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("blendshape deltas must be finite")
        names = tuple(self.names)
        if len(names) != d.shape[0]:
            raise ValueError("one name per blendshape required")
        object.__setattr__(self, "deltas", d)
        object.__setattr__(self, "names", names)

    @property
    def num_shapes(self) -> int:
        return self.deltas.shape[0]


@dataclass(frozen=True, eq=False)
class RegionMask:
    triangle_indices: np.ndarray

    def __post_init__(self) -> None:
        idx = np.unique(np.asarray(self.triangle_indices, dtype=np.int64))
        if idx.size == 0:
            raise BadRegionIndex("region mask is empty")
        idx.flags.writeable = False
        object.__setattr__(self, "triangle_indices", idx)

    def __len__(self) -> int:
        return len(self.triangle_indices)

    def validate(self, mesh: TriMesh) -> None:
        bad = self.triangle_indices[
            (self.triangle_indices < 0) | (self.triangle_indices >= len(mesh.triangles))
        ]
        if bad.size:
            raise BadRegionIndex(f"region indices out of range: {bad.tolist()}")


def triangle_frames(corners: np.ndarray) -> np.ndarray:
    """Vectorized :func:`geomcore.triangle_frame` over ``(..., 3, 3)`` corner arrays.

    Returns frames of shape ``(..., 3, 3)``; no degeneracy check.
    """
    e1 = corners[..., 1, :] - corners[..., 0, :]
    e2 = corners[..., 2, :] - corners[..., 0, :]
    c = np.cross(e1, e2)
    n = c / np.sqrt(np.linalg.norm(c, axis=-1, keepdims=True))
    return np.stack((e1, e2, n), axis=-1)


def deformation_gradient(rest, deformed) -> np.ndarray:
    """``F = frame(deformed) @ inv(frame(rest))`` for ``(3, 3)`` corner arrays (rows = vertices)."""
    rest = np.asarray(rest, dtype=float)
    v_rest = triangle_frame(*rest)
    deformed = np.asarray(deformed, dtype=float)
    try:
        v_def = triangle_frame(*deformed)
    except DegenerateTriangle:
        # collapsed deformed triangle: zero normal column, F is rank deficient
        v_def = np.column_stack((deformed[1] - deformed[0], deformed[2] - deformed[0], np.zeros(3)))
    return v_def @ np.linalg.inv(v_rest)


def apply_weights(rig: BlendshapeRig, w) -> TriMesh:
    w = np.asarray(w, dtype=float)
    if w.shape != (rig.num_shapes,):
        raise WeightLengthMismatch(f"expected {rig.num_shapes} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    verts = rig.neutral.vertices + np.tensordot(w, rig.deltas, axes=1)
    return TriMesh(verts, rig.neutral.triangles)


def check_nondegenerate(mesh: TriMesh, triangles=None) -> None:
    idx = np.arange(len(mesh.triangles)) if triangles is None else np.asarray(triangles)
    corners = mesh.vertices[mesh.triangles[idx]]
    c = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    bad = idx[np.linalg.norm(c, axis=1) <= DEGENERACY_EPS]
    if bad.size:
        raise DegenerateNeutralTriangle(f"degenerate neutral triangles: {bad.tolist()}")


# -- Wavefront OBJ -----------------------------------------------------------------


def load_obj(path) -> TriMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated, other records ignored."""
    verts: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for p in parts[1:]:
                    i = int(p.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
    return TriMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def export_obj(mesh: TriMesh, path) -> None:
    # repr() is the shortest string that round-trips the double exactly
    lines = [f"v {x!r} {y!r} {z!r}\n" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("".join(lines), encoding="utf-8")


# -- manifest ----------------------------------------------------------------------


def load_region(path) -> RegionMask:
    indices = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                indices.append(int(line))
            except ValueError:
                raise BadRegionIndex(f"{path}:{lineno}: not an integer: {line!r}") from None
    return RegionMask(indices)


def load_manifest(path) -> tuple[BlendshapeRig, RegionMask]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RigLoadError(f"{path}: invalid manifest: {exc}") from exc
    base = path.parent
    try:
        neutral_path = base / doc["neutral"]
        shape_entries = doc["shapes"]
        region_path = base / doc["region"]
    except (KeyError, TypeError) as exc:
        raise RigLoadError(f"{path}: manifest needs 'neutral', 'shapes' and 'region'") from exc
    if not shape_entries:
        raise RigLoadError(f"{path}: manifest lists no shapes")

    neutral = load_obj(neutral_path)
    check_nondegenerate(neutral)
    names, deltas = [], []
    for entry in shape_entries:
        if isinstance(entry, str):
            entry = {"path": entry}
        target_path = base / entry["path"]
        target = load_obj(target_path)
        if target.triangles.shape != neutral.triangles.shape or np.any(
            target.triangles != neutral.triangles
        ):
            raise TopologyMismatch(f"{target_path}: triangle list differs from neutral")
        if target.vertices.shape != neutral.vertices.shape:
            raise TopologyMismatch(f"{target_path}: vertex count differs from neutral")
        deltas.append(target.vertices - neutral.vertices)
        names.append(entry.get("name", Path(entry["path"]).stem))

    mask = load_region(region_path)
    mask.validate(neutral)
    return BlendshapeRig(neutral, np.stack(deltas), tuple(names)), mask


def save_manifest(directory, rig: BlendshapeRig, mask: RegionMask, name: str = "manifest.json") -> Path:
    """Write a rig as neutral/target OBJ files, a region file and a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    export_obj(rig.neutral, directory / "neutral.obj")
    shapes = []
    for k, shape_name in enumerate(rig.names):
        fname = f"{shape_name}.obj"
        export_obj(TriMesh(rig.neutral.vertices + rig.deltas[k], rig.neutral.triangles), directory / fname)
        shapes.append({"name": shape_name, "path": fname})
    (directory / "region.txt").write_text(
        "".join(f"{j}\n" for j in mask.triangle_indices.tolist()), encoding="utf-8"
    )
    manifest = directory / name
    manifest.write_text(
        json.dumps({"neutral": "neutral.obj", "shapes": shapes, "region": "region.txt"}, indent=2) + "\n",
        encoding="utf-8",
    )
    return manifest


# -- procedural rigs ---------------------------------------------------------------

JAW_OPEN_SHEAR = 0.35
JAW_OPEN_FLOOR_SHEAR = 0.1
JAW_SIDE_SHEAR = 0.3


def wedge_rig() -> tuple[BlendshapeRig, RegionMask]:
    """Tiny hermetic test rig: a jaw "wedge" of 8 masked triangles plus 2 unmasked ones.

    The wedge is a vertical plate in the ``x = 0`` plane (jaw side) and a horizontal
    plate in ``z = 0`` (jaw floor) hinged along the ``y`` axis. Both shapes are
    in-plane shears of the plates: ``jaw_open`` shears the side plate as a first-order
    rotation about ``x`` (and the floor slightly), ``jaw_side`` shears the floor as a
    first-order rotation about ``z``. Shearing keeps every masked triangle's cross
    product fixed, so the per-triangle deformation gradients are exactly affine in
    the weights.
    """
    vertices = np.array(
        [
            [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 2.0, 0.0],  # hinge
            [0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 2.0, 1.0],  # side plate top
            [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 0.0],  # floor outer edge
            [0.0, 1.0, 2.0],  # crown, outside the jaw
        ]
    )  # fmt: skip
    triangles = np.array(
        [
            [0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4],  # side plate
            [0, 6, 7], [0, 7, 1], [1, 7, 8], [1, 8, 2],  # floor
            [3, 4, 9], [4, 5, 9],  # crown
        ]
    )  # fmt: skip
    x, z = vertices[:, 0], vertices[:, 2]
    jaw = np.arange(9)
    jaw_open = np.zeros_like(vertices)
    jaw_open[jaw, 1] = -JAW_OPEN_SHEAR * z[jaw] + JAW_OPEN_FLOOR_SHEAR * x[jaw]
    jaw_side = np.zeros_like(vertices)
    jaw_side[jaw, 1] = JAW_SIDE_SHEAR * x[jaw]
    rig = BlendshapeRig(TriMesh(vertices, triangles), np.stack([jaw_open, jaw_side]), ("jaw_open", "jaw_side"))
    return rig, RegionMask(np.arange(8))


def synthetic_rig(num_shapes: int, num_triangles: int, seed: int = 0) -> tuple[BlendshapeRig, RegionMask]:
    """Random grid rig for solver benchmarks; all triangles are masked."""
    rng = np.random.default_rng(seed)
    cols = math.ceil(math.sqrt(num_triangles / 2.0))
    rows = math.ceil(num_triangles / (2 * cols))
    gx, gy = np.meshgrid(np.arange(cols + 1, dtype=float), np.arange(rows + 1, dtype=float))
    vertices = np.column_stack((gx.ravel(), gy.ravel(), 0.1 * rng.standard_normal(gx.size)))
    tris = []
    for r in range(rows):
        for c in range(cols):
            a = r * (cols + 1) + c
            b, d = a + 1, a + cols + 1
            tris += [(a, b, d + 1), (a, d + 1, d)]
    triangles = np.array(tris[:num_triangles])
    deltas = 0.05 * rng.standard_normal((num_shapes, len(vertices), 3))
    names = tuple(f"shape_{k:02d}" for k in range(num_shapes))
    return BlendshapeRig(TriMesh(vertices, triangles), deltas, names), RegionMask(np.arange(len(triangles)))

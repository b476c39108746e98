"""Dense signed distance grids, isosurface extraction and mesh files.

The grid samples the lattice of cell corners, so a resolution of ``R`` gives
``R ** 3`` values and ``R - 1`` cells per axis. Triangles come from
``mcubes``; vertices are then moved exactly onto the linear zero crossing of
their cell edge and welded by edge key, so watertightness does not depend on a
distance tolerance.
"""

from __future__ import annotations

import dataclasses as dc
import logging
from pathlib import Path
from typing import Literal, Protocol, TypedDict

import mcubes
import numpy as np
import torch
import trimesh
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import InsufficientData
from .geometry import CameraIntrinsics

LOGGER = logging.getLogger(__name__)

MeshFormat = Literal["obj", "ply"]


@dc.dataclass(eq=False)
class SdfGrid:
    """Signed distances on a regular lattice spanning ``[lower, upper]``."""

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (3,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (3,)).copy()
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError(f"grid must be 3D with >= 2 samples per axis (got {self.values.shape})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if np.any(self.upper <= self.lower):
            raise ValueError(f"empty bounds {self.lower} .. {self.upper}")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (np.array(self.resolution) - 1)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.resolution)]

    def to_world(self, index_coords: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(index_coords, dtype=float) * self.spacing


@dc.dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray | None = None
    """Optional ``(V, 3)`` uint8 vertex colours."""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.vertices):
                raise ValueError(f"{len(self.colors)} colours for {len(self.vertices)} vertices")

    @classmethod
    def empty(cls) -> TriangleMesh:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.faces)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_cross(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return np.cross(b - a, c - a)

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        cross = self.face_cross()
        return cross / np.maximum(np.linalg.norm(cross, axis=1, keepdims=True), 1e-300)

    def with_vertices(self, vertices: np.ndarray) -> TriangleMesh:
        return TriangleMesh(vertices, self.faces.copy(), None if self.colors is None else self.colors.copy())

    def sample_surface(self, n_samples: int, seed: int = 0) -> np.ndarray:
        """Area-weighted uniform samples on the triangles."""
        rng = np.random.default_rng(seed)
        areas = self.face_areas()
        chosen = rng.choice(len(self.faces), size=n_samples, p=areas / areas.sum())
        u, v = rng.random((2, n_samples))
        flip = u + v > 1
        u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
        a, b, c = (self.vertices[self.faces[chosen, i]] for i in range(3))
        return a + u[:, None] * (b - a) + v[:, None] * (c - a)

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(
            self.vertices, self.faces, vertex_colors=self.colors, process=False, validate=False
        )


def sample_grid(
    source,
    resolution: int,
    bounds: tuple[float, float] = (-1.0, 1.0),
    chunk: int = 65536,
) -> SdfGrid:
    """Evaluate ``source`` on a ``resolution ** 3`` lattice.

    ``source`` is a field module (``SdfField`` or ``AnalyticField``) or a numpy
    function of ``(N, 3)`` points.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2 (got {resolution})")
    lower, upper = bounds
    axis = np.linspace(lower, upper, resolution)
    points = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    if isinstance(source, torch.nn.Module):
        # closed-form fields keep double precision
        dtype = torch.float64 if not list(source.parameters()) else torch.float32
        values = np.empty(len(points))
        with torch.no_grad():
            for start in range(0, len(points), chunk):
                batch = torch.as_tensor(points[start : start + chunk], dtype=dtype)
                values[start : start + chunk] = source.sdf(batch).double().numpy()
    else:
        values = np.concatenate(
            [np.asarray(source(points[s : s + chunk]), dtype=float) for s in range(0, len(points), chunk)]
        )
    return SdfGrid(values.reshape(resolution, resolution, resolution), lower, upper)


def _snap_to_edges(vertices: np.ndarray, values: np.ndarray, iso: float) -> tuple[np.ndarray, np.ndarray]:
    """Move vertices onto the linear crossing of their edge; return them with edge keys."""
    vertices = vertices.copy()
    shape = np.array(values.shape)
    offset = np.abs(vertices - np.round(vertices))
    axis = np.argmax(offset, axis=1)
    on_node = offset.max(axis=1) < 1e-12
    corner = np.round(vertices).astype(np.int64)
    rows = np.arange(len(vertices))
    corner[rows, axis] = np.floor(vertices[rows, axis]).astype(np.int64)
    corner = np.clip(corner, 0, shape - 1)
    edge = ~on_node & (corner[rows, axis] < shape[axis] - 1)
    lo = corner[edge]
    hi = lo.copy()
    hi[np.arange(len(lo)), axis[edge]] += 1
    f0 = values[tuple(lo.T)]
    f1 = values[tuple(hi.T)]
    delta = f1 - f0
    t = np.where(delta != 0, (iso - f0) / np.where(delta != 0, delta, 1.0), 0.0)
    vertices[rows[edge], axis[edge]] = lo[np.arange(len(lo)), axis[edge]] + np.clip(t, 0.0, 1.0)
    kind = np.where(edge, axis, 3)
    linear = (corner[:, 0] * shape[1] + corner[:, 1]) * shape[2] + corner[:, 2]
    return vertices, linear * 4 + kind


def _orient_outward(faces: np.ndarray, vertices: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Flip the winding when most face normals point against the SDF gradient."""
    gradients = np.gradient(values)
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    normals = np.cross(b - a, c - a)
    centroids = (a + b + c) / 3.0
    grad = np.stack(
        [ndimage.map_coordinates(g, centroids.T, order=1, mode="nearest") for g in gradients],
        axis=1,
    )
    agreement = np.einsum("ij,ij->i", normals, grad)
    if np.count_nonzero(agreement < 0) > np.count_nonzero(agreement > 0):
        return faces[:, [0, 2, 1]]
    return faces


def marching_cubes(grid: SdfGrid, iso: float = 0.0) -> TriangleMesh:
    """Extract the ``iso`` level set of ``grid`` with outward (positive SDF) normals."""
    values = grid.values
    if values.min() >= iso or values.max() <= iso:
        return TriangleMesh.empty()
    vertices, faces = mcubes.marching_cubes(values, iso)
    if len(faces) == 0:
        return TriangleMesh.empty()
    vertices, keys = _snap_to_edges(np.asarray(vertices, dtype=float), values, iso)
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    vertices = vertices[first]
    faces = inverse.reshape(-1)[np.asarray(faces, dtype=np.int64)]
    distinct = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[distinct]
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    faces = faces[np.linalg.norm(np.cross(b - a, c - a), axis=1) > 0]
    faces = _orient_outward(faces, vertices, values)
    used, faces = np.unique(faces, return_inverse=True)
    mesh = TriangleMesh(grid.to_world(vertices[used]), faces.reshape(-1, 3))
    LOGGER.debug("marching cubes: %d vertices, %d faces", len(mesh.vertices), len(mesh.faces))
    return mesh


class MeshStats(TypedDict):
    vertices: int
    faces: int
    edges: int
    watertight: bool
    euler_characteristic: int
    bbox_min: list[float]
    bbox_max: list[float]


def unique_edges(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Undirected edges of ``faces`` and how many faces share each."""
    edges = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    if len(edges) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.unique(edges, axis=0, return_counts=True)


def mesh_stats(mesh: TriangleMesh) -> MeshStats:
    edges, counts = unique_edges(mesh.faces)
    if len(mesh.vertices):
        bbox_min, bbox_max = mesh.vertices.min(axis=0).tolist(), mesh.vertices.max(axis=0).tolist()
    else:
        bbox_min = bbox_max = [0.0, 0.0, 0.0]
    return {
        "vertices": len(mesh.vertices),
        "faces": len(mesh.faces),
        "edges": len(edges),
        "watertight": bool(len(counts) and np.all(counts == 2)),
        "euler_characteristic": len(mesh.vertices) - len(edges) + len(mesh.faces),
        "bbox_min": bbox_min,
        "bbox_max": bbox_max,
    }


def _format_of(path: Path, fmt: str | None) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("obj", "ply"):
        raise ValueError(f"unsupported mesh format {fmt!r} (expected 'obj' or 'ply')")
    return fmt


def export_mesh(mesh: TriangleMesh, path: str | Path, fmt: MeshFormat | None = None) -> Path:
    """Write ASCII OBJ or binary little-endian PLY (with vertex colours)."""
    path = Path(path)
    fmt = _format_of(path, fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "obj":
        lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
        path.write_text("\n".join(lines) + "\n", encoding="utf8")
        return path
    colors = mesh.colors if mesh.colors is not None else np.full((len(mesh.vertices), 3), 200, np.uint8)
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            "comment orbit-recon mesh",
            f"element vertex {len(mesh.vertices)}",
            "property double x",
            "property double y",
            "property double z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            f"element face {len(mesh.faces)}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
    )
    vertex = np.empty(
        len(mesh.vertices),
        dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    for i, name in enumerate("xyz"):
        vertex[name] = mesh.vertices[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        vertex[name] = colors[:, i]
    face = np.empty(len(mesh.faces), dtype=[("count", "u1"), ("indices", "<i4", (3,))])
    face["count"] = 3
    face["indices"] = mesh.faces
    path.write_bytes(header.encode("ascii") + b"\n" + vertex.tobytes() + face.tobytes())
    return path


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "int8": "i1", "uint8": "u1",
    "short": "<i2", "ushort": "<u2", "int16": "<i2", "uint16": "<u2",
    "int": "<i4", "uint": "<u4", "int32": "<i4", "uint32": "<u4",
    "float": "<f4", "double": "<f8", "float32": "<f4", "float64": "<f8",
}  # fmt: skip


def _read_ply(data: bytes) -> TriangleMesh:
    end = data.index(b"end_header\n") + len(b"end_header\n")
    lines = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise ValueError("only binary little-endian PLY files are supported")
    elements: list[tuple[str, int, list[list[str]]]] = []
    for line in lines:
        parts = line.split()
        if parts and parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts and parts[0] == "property":
            elements[-1][2].append(parts[1:])
    offset = end
    vertices = np.zeros((0, 3))
    colors = None
    faces = np.zeros((0, 3), dtype=np.int64)
    for name, count, properties in elements:
        if name == "face":
            (_, count_type, index_type, _) = properties[0]
            dtype = np.dtype([("count", _PLY_TYPES[count_type]), ("indices", _PLY_TYPES[index_type], (3,))])
            table = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            if np.any(table["count"] != 3):
                raise ValueError("only triangle faces are supported")
            faces = table["indices"].astype(np.int64)
        else:
            dtype = np.dtype([(prop[1], _PLY_TYPES[prop[0]]) for prop in properties])
            table = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            if name == "vertex":
                vertices = np.stack([table[k].astype(float) for k in "xyz"], axis=1)
                if {"red", "green", "blue"} <= set(dtype.names or ()):
                    colors = np.stack([table[k] for k in ("red", "green", "blue")], axis=1)
        offset += dtype.itemsize * count
    return TriangleMesh(vertices, faces, colors)


def _read_obj(text: str) -> TriangleMesh:
    vertices, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vertices.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            indices = [int(p.split("/")[0]) for p in parts[1:]]
            indices = [i - 1 if i > 0 else len(vertices) + i for i in indices]
            # fan-triangulate polygons
            faces += [[indices[0], indices[k], indices[k + 1]] for k in range(1, len(indices) - 1)]
    return TriangleMesh(np.array(vertices).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def import_mesh(path: str | Path, fmt: MeshFormat | None = None) -> TriangleMesh:
    path = Path(path)
    if _format_of(path, fmt) == "obj":
        return _read_obj(path.read_text(encoding="utf8"))
    return _read_ply(path.read_bytes())


class SurfaceReference(Protocol):
    """A reference surface: signed distance plus surface samples (e.g. ``SceneModel``)."""

    def sdf(self, points: np.ndarray) -> np.ndarray: ...

    def sample_surface(self, n_samples: int, seed: int = 0) -> np.ndarray: ...


def _distance_to_mesh(mesh: TriangleMesh, points: np.ndarray) -> np.ndarray:
    _, distance, _ = trimesh.proximity.closest_point(mesh.to_trimesh(), points)
    return np.asarray(distance, dtype=float)


def chamfer_distance(
    mesh: TriangleMesh,
    reference: SurfaceReference | TriangleMesh,
    n_samples: int = 20000,
    seed: int = 0,
) -> tuple[float, float]:
    """Symmetric Chamfer distance ``(mean, max)`` between ``mesh`` and ``reference``.

    Mesh samples are measured with the reference's exact ``|sdf|`` (or, for a
    mesh reference, the closest point on its triangles); reference samples
    are measured against the triangles of ``mesh``.
    """
    if mesh.is_empty:
        raise InsufficientData("cannot measure the distance to an empty mesh")
    if n_samples < 100:
        raise ValueError(f"n_samples must be >= 100 (got {n_samples})")
    from_mesh = mesh.sample_surface(n_samples, seed)
    if isinstance(reference, TriangleMesh):
        forward = _distance_to_mesh(reference, from_mesh)
        from_reference = reference.sample_surface(n_samples, seed + 1)
    else:
        forward = np.abs(reference.sdf(from_mesh))
        from_reference = reference.sample_surface(n_samples, seed=seed + 1)
    backward = _distance_to_mesh(mesh, from_reference)
    mean = 0.5 * (float(forward.mean()) + float(backward.mean()))
    return mean, float(max(forward.max(), backward.max()))


def nearest_vertex_distance(a: TriangleMesh, b: TriangleMesh) -> float:
    """Largest distance from a vertex of ``a`` to the nearest vertex of ``b``."""
    if len(a.vertices) == 0 or len(b.vertices) == 0:
        return float("inf") if len(a.vertices) != len(b.vertices) else 0.0
    distance, _ = cKDTree(b.vertices).query(a.vertices)
    return float(distance.max())


def color_vertices(
    field,
    mesh: TriangleMesh,
    photometric=None,
    *,
    K: CameraIntrinsics | None = None,
    frame_index: int = 0,
    chunk: int = 16384,
) -> TriangleMesh:
    """Bake the field radiance, viewed head-on, into vertex colours.

    With ``photometric`` parameters (and ``K``) the colours are passed through
    the image formation of frame ``frame_index`` at the principal point.
    """
    from .photometric.params import forward_pipeline

    colors = np.empty((len(mesh.vertices), 3))
    with torch.no_grad():
        for start in range(0, len(mesh.vertices), chunk):
            points = torch.as_tensor(mesh.vertices[start : start + chunk], dtype=torch.float32)
            _, gradient, features = field.sdf_and_gradient(points)
            normals = torch.nn.functional.normalize(gradient, dim=-1)
            colors[start : start + chunk] = field.radiance(points, -normals, normals, features).double().numpy()
    if photometric is not None:
        if K is None:
            raise ValueError("photometric colouring needs the camera intrinsics")
        pixels = np.broadcast_to(K.principal_point, (len(colors), 2))
        colors = forward_pipeline(colors, pixels, photometric.frame(frame_index), photometric.response, K)
    baked = np.round(np.clip(colors, 0.0, 1.0) * 255).astype(np.uint8)
    return TriangleMesh(mesh.vertices, mesh.faces, baked)


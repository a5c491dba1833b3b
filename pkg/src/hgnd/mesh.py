"""Triangle-mesh data model, PLY ingestion, and local surface patches.

Points are plain float64 numpy arrays of shape (3,) and point sets are
(n, 3) arrays throughout the library. A :class:`TriangleMesh` is immutable
after construction and caches the per-triangle quantities (centroid, area,
unit normal) that every downstream stage consumes. All support radii and
noise magnitudes in public APIs are expressed in mesh-resolution (mr) units,
the mean triangle-edge length, and converted to model units internally.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_point, as_points, check_positive
from .errors import EmptyMeshError, EmptyPatchError, PlyFormatError

__all__ = [
    "TriangleMesh",
    "RigidTransform",
    "LocalSurfacePatch",
    "load_ply",
    "save_ply",
    "mesh_resolution",
    "apply_transform",
    "crop_patch",
    "merge_meshes",
]

# Relative area below which a triangle is treated as degenerate (kept in the
# mesh, excluded from weighted sums; its normal is undefined).
DEGENERATE_AREA_REL = 1e-14


class TriangleMesh:
    """Indexed vertex/triangle surface with cached per-triangle data.

    Parameters
    ----------
    vertices : array-like of shape (n, 3)
    triangles : array-like of shape (m, 3)
        Vertex indices; the three indices of a triangle must be pairwise
        distinct and in range.
    validate : bool
        Skip index validation for internally constructed meshes.
    """

    def __init__(self, vertices, triangles, *, validate: bool = True):
        self.vertices = as_points(vertices, "vertices") if validate else np.ascontiguousarray(
            vertices, dtype=np.float64
        )
        tris = np.ascontiguousarray(triangles, dtype=np.int64)
        if tris.size == 0:
            tris = tris.reshape(0, 3)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"triangles must have shape (m, 3), got {np.shape(triangles)}")
        if validate and tris.size:
            if tris.min() < 0 or tris.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            if (
                np.any(tris[:, 0] == tris[:, 1])
                or np.any(tris[:, 1] == tris[:, 2])
                or np.any(tris[:, 0] == tris[:, 2])
            ):
                raise ValueError("triangle with repeated vertex indices")
        self.triangles = tris
        self._compute_caches()
        self._freeze()

    @classmethod
    def _from_cached(cls, vertices, triangles, centroids, areas, normals, degenerate):
        """Build a mesh reusing already-computed per-triangle caches."""
        mesh = cls.__new__(cls)
        mesh.vertices = vertices
        mesh.triangles = triangles
        mesh.centroids = centroids
        mesh.areas = areas
        mesh.normals = normals
        mesh.degenerate = degenerate
        mesh._freeze()
        return mesh

    def _compute_caches(self):
        v = self.vertices
        t = self.triangles
        p1, p2, p3 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        self.centroids = (p1 + p2 + p3) / 3.0
        cross = np.cross(p2 - p1, p3 - p2)
        cross_norm = np.linalg.norm(cross, axis=1)
        self.areas = cross_norm / 2.0
        scale = self._bbox_diagonal()
        self.degenerate = self.areas <= DEGENERATE_AREA_REL * scale * scale
        normals = np.zeros_like(cross)
        ok = ~self.degenerate & (cross_norm > 0)
        normals[ok] = cross[ok] / cross_norm[ok, None]
        self.normals = normals

    def _bbox_diagonal(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def _freeze(self):
        for arr in (self.vertices, self.triangles, self.centroids, self.areas,
                    self.normals, self.degenerate):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def resolution(self) -> float:
        """Mesh resolution (mr): mean length of all triangle edges."""
        return mesh_resolution(self)

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    @cached_property
    def _vertex_tree(self) -> cKDTree:
        return cKDTree(self.vertices)

    def transformed(self, transform: "RigidTransform") -> "TriangleMesh":
        return apply_transform(self, transform)

    def save(self, path) -> None:
        save_ply(self, path)

    def __repr__(self) -> str:
        return f"TriangleMesh(vertices={self.n_vertices}, triangles={self.n_triangles})"


def mesh_resolution(mesh: TriangleMesh) -> float:
    """Mean edge length over all triangles; shared edges count once per triangle.

    Raises
    ------
    EmptyMeshError
        If the mesh has no triangles.
    """
    if mesh.n_triangles == 0:
        raise EmptyMeshError("mesh resolution is undefined for a mesh with no triangles")
    v, t = mesh.vertices, mesh.triangles
    p1, p2, p3 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    lengths = np.concatenate([
        np.linalg.norm(p2 - p1, axis=1),
        np.linalg.norm(p3 - p2, axis=1),
        np.linalg.norm(p1 - p3, axis=1),
    ])
    return float(lengths.mean())


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: v -> rotation @ v + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.ascontiguousarray(self.rotation, dtype=np.float64)
        tr = as_point(self.translation, "translation")
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(rot), 1.0, atol=1e-9):
            raise ValueError("rotation determinant must be +1")
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_flat12(cls, values) -> "RigidTransform":
        """Build from 12 reals: the 3x4 [R | t] matrix in row-major order."""
        arr = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return cls(arr[:, :3], arr[:, 3])

    def to_flat12(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]]).ravel()

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform random rotation matrix (QR of a Gaussian, det fixed to +1)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def apply_transform(mesh: TriangleMesh, transform: RigidTransform) -> TriangleMesh:
    """Map every vertex by the rigid transform; per-triangle caches are recomputed."""
    return TriangleMesh(transform.apply(mesh.vertices), mesh.triangles, validate=False)


def merge_meshes(meshes) -> TriangleMesh:
    """Concatenate meshes into one (disjoint vertex blocks, indices offset)."""
    meshes = list(meshes)
    if not meshes:
        raise EmptyMeshError("nothing to merge")
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += m.n_vertices
    return TriangleMesh(np.vstack(verts), np.vstack(tris), validate=False)


@dataclass(frozen=True)
class LocalSurfacePatch:
    """Sub-mesh within the support sphere around a keypoint.

    ``radius`` is in model units, ``radius_mr`` in mr units, and ``mr`` is the
    resolution of the source mesh the patch was cropped from.
    """

    keypoint: np.ndarray
    radius: float
    radius_mr: float
    mr: float
    mesh: TriangleMesh
    triangle_indices: np.ndarray = field(repr=False)

    @property
    def n_triangles(self) -> int:
        return self.mesh.n_triangles


def crop_patch(
    mesh: TriangleMesh,
    keypoint,
    radius_mr: float,
    mr: float | None = None,
    membership: str = "centroid",
) -> LocalSurfacePatch:
    """Cut out the support sphere of radius ``radius_mr`` (mr units) around a keypoint.

    A triangle belongs to the patch when its centroid lies within the sphere
    (default). ``membership`` may also be ``"any_vertex"`` (keep triangles that
    touch the sphere) or ``"all_vertices"`` (keep only fully enclosed ones).
    The vertex list of the returned sub-mesh is compacted to referenced
    vertices.

    Raises
    ------
    EmptyPatchError
        If no triangle is retained; callers skip such keypoints.
    """
    keypoint = as_point(keypoint, "keypoint")
    check_positive("radius_mr", radius_mr)
    if mr is None:
        mr = mesh.resolution
    radius = radius_mr * mr

    # Tree query with a relative margin, then an exact filter, so boundary
    # membership is decided by plain numpy arithmetic.
    if membership == "centroid":
        cand = mesh._centroid_tree.query_ball_point(keypoint, radius * (1 + 1e-12))
        cand = np.asarray(cand, dtype=np.int64)
        dist = np.linalg.norm(mesh.centroids[cand] - keypoint, axis=1)
        keep = cand[dist <= radius]
    elif membership in ("any_vertex", "all_vertices"):
        vidx = mesh._vertex_tree.query_ball_point(keypoint, radius * (1 + 1e-12))
        inside = np.zeros(mesh.n_vertices, dtype=bool)
        vidx = np.asarray(vidx, dtype=np.int64)
        if vidx.size:
            d = np.linalg.norm(mesh.vertices[vidx] - keypoint, axis=1)
            inside[vidx[d <= radius]] = True
        per_tri = inside[mesh.triangles]
        mask = per_tri.any(axis=1) if membership == "any_vertex" else per_tri.all(axis=1)
        keep = np.flatnonzero(mask)
    else:
        raise ValueError(f"unknown membership mode {membership!r}")

    if keep.size == 0:
        raise EmptyPatchError(
            f"no triangle within {radius_mr}mr ({radius:g} units) of keypoint {keypoint}"
        )
    keep = np.sort(keep)

    tris = mesh.triangles[keep]
    used, inverse = np.unique(tris, return_inverse=True)
    sub = TriangleMesh._from_cached(
        mesh.vertices[used],
        inverse.reshape(-1, 3).astype(np.int64),
        mesh.centroids[keep],
        mesh.areas[keep],
        mesh.normals[keep],
        mesh.degenerate[keep],
    )
    return LocalSurfacePatch(
        keypoint=keypoint,
        radius=float(radius),
        radius_mr=float(radius_mr),
        mr=float(mr),
        mesh=sub,
        triangle_indices=keep,
    )


# ---------------------------------------------------------------------------
# PLY reading and writing
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _PlyProperty:
    name: str
    dtype: str                  # numpy dtype code, little-endian applied later
    count_dtype: str | None = None  # set for list properties

    @property
    def is_list(self) -> bool:
        return self.count_dtype is not None


@dataclass
class _PlyElement:
    name: str
    count: int
    properties: list[_PlyProperty] = field(default_factory=list)


def _parse_ply_header(fh):
    """Read the header; returns (format, elements, header_end_offset)."""
    line = fh.readline()
    if line.strip() != b"ply":
        raise PlyFormatError("line 1: not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: list[_PlyElement] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyFormatError(f"line {lineno}: unexpected end of file inside header")
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens:
            continue
        kw = tokens[0]
        if kw == "comment" or kw == "obj_info":
            continue
        if kw == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyFormatError(
                    f"line {lineno}: unsupported PLY format {' '.join(tokens[1:])!r}"
                )
            fmt = tokens[1]
        elif kw == "element":
            if len(tokens) != 3:
                raise PlyFormatError(f"line {lineno}: malformed element declaration")
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyFormatError(f"line {lineno}: bad element count {tokens[2]!r}") from None
            elements.append(_PlyElement(tokens[1], count))
        elif kw == "property":
            if not elements:
                raise PlyFormatError(f"line {lineno}: property before any element")
            try:
                if tokens[1] == "list":
                    prop = _PlyProperty(tokens[4], _PLY_TYPES[tokens[3]], _PLY_TYPES[tokens[2]])
                else:
                    prop = _PlyProperty(tokens[2], _PLY_TYPES[tokens[1]])
            except (KeyError, IndexError):
                raise PlyFormatError(f"line {lineno}: bad property declaration {raw!r}") from None
            elements[-1].properties.append(prop)
        elif kw == "end_header":
            break
        else:
            raise PlyFormatError(f"line {lineno}: unknown header keyword {kw!r}")
    if fmt is None:
        raise PlyFormatError("header declares no 'format' line")
    return fmt, elements, fh.tell(), lineno


def _index_prop(element: _PlyElement) -> _PlyProperty:
    lists = [p for p in element.properties if p.is_list]
    for p in lists:
        if p.name in ("vertex_indices", "vertex_index"):
            return p
    if len(lists) == 1:
        return lists[0]
    raise PlyFormatError(f"element '{element.name}' has no vertex index list property")


def _read_ascii_element(lines, lineno, element, want):
    """Consume `element.count` rows; collect columns named in `want`."""
    out = {name: [] for name in want}
    faces = []
    idx_prop = _index_prop(element) if element.name == "face" else None
    for _ in range(element.count):
        try:
            raw = next(lines)
        except StopIteration:
            raise PlyFormatError(
                f"line {lineno[0] + 1}: file ends before {element.count} "
                f"'{element.name}' rows were read"
            ) from None
        lineno[0] += 1
        tokens = raw.split()
        pos = 0
        for prop in element.properties:
            if prop.is_list:
                try:
                    n = int(tokens[pos])
                    values = tokens[pos + 1: pos + 1 + n]
                    if len(values) != n:
                        raise IndexError
                    pos += 1 + n
                except (ValueError, IndexError):
                    raise PlyFormatError(
                        f"line {lineno[0]}: malformed list property '{prop.name}'"
                    ) from None
                if prop is idx_prop:
                    faces.append([int(v) for v in values])
            else:
                if pos >= len(tokens):
                    raise PlyFormatError(
                        f"line {lineno[0]}: row has too few values for element "
                        f"'{element.name}'"
                    )
                if prop.name in out:
                    try:
                        out[prop.name].append(float(tokens[pos]))
                    except ValueError:
                        raise PlyFormatError(
                            f"line {lineno[0]}: bad numeric value {tokens[pos]!r}"
                        ) from None
                pos += 1
    return out, faces


def _read_binary_element(buf, offset, element, want):
    """Binary little-endian element reader; returns (columns, faces, new_offset)."""
    out = {name: None for name in want}
    faces = []
    has_list = any(p.is_list for p in element.properties)

    if not has_list:
        dtype = np.dtype([(p.name, "<" + p.dtype) for p in element.properties])
        end = offset + dtype.itemsize * element.count
        if end > len(buf):
            raise PlyFormatError(
                f"byte {len(buf)}: file ends before {element.count} "
                f"'{element.name}' records were read"
            )
        rows = np.frombuffer(buf, dtype=dtype, count=element.count, offset=offset)
        for name in want:
            if name in dtype.names:
                out[name] = rows[name].astype(np.float64)
        return out, faces, end

    # Fast path: a single list property with uniform length (typical faces).
    idx_prop = _index_prop(element) if element.name == "face" else None
    if element.count and element.properties == [idx_prop]:
        cnt = np.dtype("<" + idx_prop.count_dtype)
        val = np.dtype("<" + idx_prop.dtype)
        if offset + cnt.itemsize <= len(buf):
            first = int(np.frombuffer(buf, cnt, 1, offset)[0])
            rec = np.dtype([("n", cnt), ("v", val, (first,))]) if first > 0 else None
            if rec is not None and offset + rec.itemsize * element.count <= len(buf):
                rows = np.frombuffer(buf, rec, element.count, offset)
                if np.all(rows["n"] == first):
                    faces = rows["v"].astype(np.int64).tolist()
                    return out, faces, offset + rec.itemsize * element.count

    # Generic path: walk records one by one.
    for _ in range(element.count):
        for prop in element.properties:
            if prop.is_list:
                cnt = np.dtype("<" + prop.count_dtype)
                if offset + cnt.itemsize > len(buf):
                    raise PlyFormatError(f"byte {offset}: truncated list count")
                n = int(np.frombuffer(buf, cnt, 1, offset)[0])
                offset += cnt.itemsize
                val = np.dtype("<" + prop.dtype)
                if offset + val.itemsize * n > len(buf):
                    raise PlyFormatError(f"byte {offset}: truncated list values")
                values = np.frombuffer(buf, val, n, offset)
                offset += val.itemsize * n
                if prop is idx_prop:
                    faces.append(values.astype(np.int64).tolist())
            else:
                val = np.dtype("<" + prop.dtype)
                if offset + val.itemsize > len(buf):
                    raise PlyFormatError(
                        f"byte {offset}: file ends inside element '{element.name}'"
                    )
                if prop.name in out:
                    scalar = float(np.frombuffer(buf, val, 1, offset)[0])
                    if out[prop.name] is None:
                        out[prop.name] = []
                    out[prop.name].append(scalar)
                offset += val.itemsize
    return out, faces, offset


def _triangulate(faces, n_vertices: int) -> np.ndarray:
    """Fan-triangulate polygon faces; drops slivers with repeated indices."""
    tris = []
    for face in faces:
        if len(face) < 3:
            raise PlyFormatError(f"face with fewer than 3 vertices: {face}")
        for k in range(1, len(face) - 1):
            a, b, c = face[0], face[k], face[k + 1]
            if a != b and b != c and a != c:
                tris.append((a, b, c))
    if not tris:
        return np.zeros((0, 3), dtype=np.int64)
    arr = np.asarray(tris, dtype=np.int64)
    if arr.min() < 0 or arr.max() >= n_vertices:
        bad = arr.max() if arr.max() >= n_vertices else arr.min()
        raise PlyFormatError(f"face references vertex {bad} outside 0..{n_vertices - 1}")
    return arr


def load_ply(path) -> TriangleMesh:
    """Load an ASCII or binary-little-endian PLY mesh.

    Requires a ``vertex`` element with x/y/z properties and a ``face`` element
    with a vertex index list; other elements and properties are skipped.
    Faces with more than 3 vertices are fan-triangulated. Non-manifold input
    is accepted.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()

    fmt, elements, body_offset, header_lines = _parse_ply_header(io.BytesIO(data))
    names = [e.name for e in elements]
    if "vertex" not in names:
        raise PlyFormatError("PLY has no 'vertex' element")
    if "face" not in names:
        raise PlyFormatError("PLY has no 'face' element")

    want_xyz = ("x", "y", "z")
    columns: dict[str, object] = {}
    faces: list = []

    if fmt == "ascii":
        text = data[body_offset:].decode("ascii", errors="replace")
        lines = iter(text.splitlines())
        lineno = [header_lines]
        for element in elements:
            want = want_xyz if element.name == "vertex" else ()
            out, f = _read_ascii_element(lines, lineno, element, want)
            if element.name == "vertex":
                columns = out
            if element.name == "face":
                faces = f
    else:
        offset = body_offset
        for element in elements:
            want = want_xyz if element.name == "vertex" else ()
            out, f, offset = _read_binary_element(data, offset, element, want)
            if element.name == "vertex":
                columns = {k: (np.asarray(v, dtype=np.float64) if v is not None else None)
                           for k, v in out.items()}
            if element.name == "face":
                faces = f

    for axis in want_xyz:
        if columns.get(axis) is None or len(columns[axis]) == 0:
            vertex_count = next(e.count for e in elements if e.name == "vertex")
            if vertex_count > 0:
                raise PlyFormatError(f"vertex element lacks property '{axis}'")
            columns[axis] = []
    vertices = np.column_stack([
        np.asarray(columns["x"], dtype=np.float64),
        np.asarray(columns["y"], dtype=np.float64),
        np.asarray(columns["z"], dtype=np.float64),
    ]) if len(columns["x"]) else np.zeros((0, 3))

    triangles = _triangulate(faces, len(vertices))
    return TriangleMesh(vertices, triangles, validate=False)


def save_ply(mesh: TriangleMesh, path) -> None:
    """Write the mesh as ASCII PLY (vertex x/y/z plus triangle index lists)."""
    path = Path(path)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property float64 x\nproperty float64 y\nproperty float64 z\n")
        fh.write(f"element face {mesh.n_triangles}\n")
        fh.write("property list uchar int32 vertex_indices\n")
        fh.write("end_header\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")

"""Triangle meshes: validation, OFF/OBJ I/O, boundary detection, sampling and
region extraction."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _cc


class MeshError(ValueError):
    """Raised for unparsable or invalid mesh input."""


class TriangleMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (n, 3) or (n, 2)
        Vertex positions. 2D input is padded with z = 0.
    faces : array_like, shape (f, 3)
        Vertex-index triples, counterclockwise.

    Every edge must belong to one or two faces; edges with a single face are
    boundary edges and their endpoints are boundary vertices.
    """

    def __init__(self, vertices, faces):
        v = np.asarray(vertices, dtype=float)
        t = np.asarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise MeshError("vertices must have shape (n, 3)")
        if v.shape[1] == 2:
            v = np.column_stack([v, np.zeros(len(v))])
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise MeshError("faces must have shape (f, 3) with f >= 1")
        if t.min() < 0 or t.max() >= len(v):
            bad = int(np.nonzero((t < 0).any(1) | (t >= len(v)).any(1))[0][0])
            raise MeshError(f"face {bad} has a vertex index out of range")
        degenerate = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        if degenerate.any():
            raise MeshError(f"face {int(np.argmax(degenerate))} repeats a vertex index")
        if not np.isfinite(v).all():
            raise MeshError("vertex coordinates must be finite")
        v.setflags(write=False)
        t.setflags(write=False)
        self.vertices = v
        self.faces = t

        counts = self.edge_face_count
        if (counts > 2).any():
            e = int(np.argmax(counts > 2))
            i, j = self.edges[e]
            raise MeshError(
                f"non-manifold edge {e} ({i}, {j}) is shared by {counts[e]} faces"
            )
        areas = self.face_areas
        tol = 1e-12 * self.bbox_scale**2
        if (areas <= tol).any():
            raise MeshError(f"face {int(np.argmax(areas <= tol))} has zero area")

    def __repr__(self):
        return (
            f"TriangleMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces}, "
            f"n_boundary={int(self.boundary_vertex.sum())})"
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def bbox_scale(self) -> float:
        """Diagonal length of the axis-aligned bounding box."""
        return float(np.linalg.norm(np.ptp(self.vertices, axis=0)))

    @cached_property
    def _edge_data(self):
        t = self.faces
        half = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        half.sort(axis=1)
        edges, inverse, counts = np.unique(
            half, axis=0, return_inverse=True, return_counts=True
        )
        return edges, inverse.reshape(-1), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs, shape (e, 2)."""
        return self._edge_data[0]

    @property
    def edge_face_count(self) -> np.ndarray:
        return self._edge_data[2]

    @cached_property
    def boundary_edge(self) -> np.ndarray:
        return self.edge_face_count == 1

    @cached_property
    def boundary_vertex(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.edges[self.boundary_edge].ravel()] = True
        flags.setflags(write=False)
        return flags

    @property
    def is_closed(self) -> bool:
        return not self.boundary_edge.any()

    @cached_property
    def face_areas(self) -> np.ndarray:
        p = self.vertices[self.faces]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    @cached_property
    def vertex_areas(self) -> np.ndarray:
        """Barycentric (one third of incident faces) area of every vertex."""
        return np.bincount(
            self.faces.ravel(),
            weights=np.repeat(self.face_areas / 3.0, 3),
            minlength=self.n_vertices,
        )

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric 0/1 vertex adjacency over mesh edges."""
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def total_area(self) -> float:
        return total_area(self)

    def transformed(self, rotation=None, translation=None, scale=1.0) -> "TriangleMesh":
        """Return a copy with x -> scale * R x + t applied to every vertex."""
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return TriangleMesh(v, self.faces)

    def permuted(self, perm) -> "TriangleMesh":
        """Relabel vertices so that new vertex ``i`` is old vertex ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return TriangleMesh(self.vertices[perm], inv[self.faces])


def total_area(mesh: TriangleMesh) -> float:
    """Sum of triangle areas."""
    return float(mesh.face_areas.sum())


# ---------------------------------------------------------------------------
# file I/O


def _parse_off(lines):
    # strip comments and blank lines, remember source line numbers
    body = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            body.append((lineno, text))
    if not body:
        raise MeshError("line 1: empty OFF file")
    lineno, head = body[0]
    tokens = head.split()
    if tokens[0] != "OFF":
        raise MeshError(f"line {lineno}: expected 'OFF' header, got {tokens[0]!r}")
    rest = body[1:]
    if len(tokens) > 1:
        # counts on the header line
        rest = [(lineno, " ".join(tokens[1:]))] + rest
    if not rest:
        raise MeshError(f"line {lineno}: missing counts line")
    lineno, counts = rest[0]
    try:
        nv, nf = (int(x) for x in counts.split()[:2])
    except ValueError:
        raise MeshError(f"line {lineno}: malformed counts line {counts!r}") from None
    if len(rest) < 1 + nv + nf:
        raise MeshError(
            f"line {rest[-1][0]}: expected {nv} vertices and {nf} faces, file ends early"
        )
    verts = np.empty((nv, 3))
    for r, (lineno, text) in enumerate(rest[1 : 1 + nv]):
        try:
            xyz = [float(x) for x in text.split()[:3]]
            verts[r] = xyz
        except ValueError:
            raise MeshError(f"line {lineno}: malformed vertex {text!r}") from None
    faces = np.empty((nf, 3), dtype=np.int64)
    for r, (lineno, text) in enumerate(rest[1 + nv : 1 + nv + nf]):
        try:
            vals = [int(x) for x in text.split()]
        except ValueError:
            raise MeshError(f"line {lineno}: malformed face {text!r}") from None
        if len(vals) < 4 or vals[0] != 3 or len(vals) < 1 + vals[0]:
            raise MeshError(f"line {lineno}: only triangle faces '3 i j k' are supported")
        faces[r] = vals[1:4]
    return verts, faces


def _parse_obj(lines):
    verts, faces = [], []
    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        try:
            if tokens[0] == "v":
                verts.append([float(x) for x in tokens[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError
            elif tokens[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in tokens[1:]]
                if len(idx) != 3:
                    raise MeshError(f"line {lineno}: only triangle faces are supported")
                # negative indices are relative to the current vertex count
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
        except MeshError:
            raise
        except ValueError:
            raise MeshError(f"line {lineno}: malformed {tokens[0]!r} record") from None
    if not verts or not faces:
        raise MeshError("OBJ file has no vertices or no faces")
    return np.array(verts), np.array(faces, dtype=np.int64)


def load_mesh(path, format=None) -> TriangleMesh:
    """Read an ASCII OFF or OBJ triangle mesh.

    ``format`` defaults to the file extension.
    """
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).upper()
    if fmt not in ("OFF", "OBJ"):
        raise MeshError(f"unsupported mesh format {fmt!r} (OFF or OBJ expected)")
    with open(path) as fh:
        lines = fh.readlines()
    verts, faces = _parse_off(lines) if fmt == "OFF" else _parse_obj(lines)
    return TriangleMesh(verts, faces)


def save_mesh(mesh: TriangleMesh, path, format=None):
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).upper()
    with open(path, "w") as fh:
        if fmt == "OFF":
            fh.write(f"OFF\n{mesh.n_vertices} {mesh.n_faces} 0\n")
            for x, y, z in mesh.vertices.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n")
            for i, j, k in mesh.faces.tolist():
                fh.write(f"3 {i} {j} {k}\n")
        elif fmt == "OBJ":
            for x, y, z in mesh.vertices.tolist():
                fh.write(f"v {x!r} {y!r} {z!r}\n")
            for i, j, k in mesh.faces.tolist():
                fh.write(f"f {i + 1} {j + 1} {k + 1}\n")
        else:
            raise MeshError(f"unsupported mesh format {fmt!r}")


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Boolean per-vertex indicator of a region on ``mesh``.

    A face belongs to the region iff all three of its vertices do.
    """

    mesh: TriangleMesh
    indicator: np.ndarray

    def __post_init__(self):
        ind = np.asarray(self.indicator, dtype=bool).copy()
        if ind.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"indicator has length {ind.size}, mesh has {self.mesh.n_vertices} vertices"
            )
        ind.setflags(write=False)
        object.__setattr__(self, "indicator", ind)

    @property
    def area(self) -> float:
        """Lumped (barycentric) vertex area of the included vertices."""
        return float(self.mesh.vertex_areas[self.indicator].sum())

    @property
    def count(self) -> int:
        return int(self.indicator.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.indicator)

    @property
    def face_mask(self) -> np.ndarray:
        return self.indicator[self.mesh.faces].all(axis=1)

    def __and__(self, other):
        return RegionMask(self.mesh, self.indicator & other.indicator)

    def __or__(self, other):
        return RegionMask(self.mesh, self.indicator | other.indicator)

    def __invert__(self):
        return RegionMask(self.mesh, ~self.indicator)

    def save(self, path):
        save_mask(self, path)


def save_mask(region: RegionMask, path):
    with open(path, "w") as fh:
        fh.write("\n".join("1" if b else "0" for b in region.indicator))
        fh.write("\n")


def load_mask(mesh: TriangleMesh, path) -> RegionMask:
    """Read a newline-separated 0/1 per-vertex mask."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s not in ("0", "1"):
                raise MeshError(f"line {lineno}: mask entries must be 0 or 1, got {s!r}")
            values.append(s == "1")
    return RegionMask(mesh, np.array(values, dtype=bool))


def extract_submesh(mesh: TriangleMesh, region: RegionMask):
    """Cut the faces lying entirely inside ``region`` into a separate mesh.

    Returns
    -------
    submesh : TriangleMesh
        Mesh with boundary flags recomputed on its own connectivity.
    vertex_map : ndarray
        ``vertex_map[i]`` is the parent index of submesh vertex ``i``.
    """
    if region.mesh is not mesh:
        raise ValueError("region belongs to a different mesh")
    faces = mesh.faces[region.face_mask]
    if len(faces) == 0:
        raise MeshError("region contains no complete face")
    vertex_map = np.unique(faces)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[vertex_map] = np.arange(len(vertex_map))
    return TriangleMesh(mesh.vertices[vertex_map], remap[faces]), vertex_map


def connected_components(region: RegionMask) -> list[RegionMask]:
    """Split a region into pieces connected through in-region faces.

    Masked vertices that touch no in-region face form singleton pieces.
    Pieces are sorted by decreasing area, then by smallest vertex index.
    """
    mesh = region.mesh
    if not region.indicator.any():
        return []
    faces = mesh.faces[region.face_mask]
    n = mesh.n_vertices
    rows = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
    cols = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    graph = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = _cc(graph, directed=False)
    pieces = []
    for lab in np.unique(labels[region.indicator]):
        ind = (labels == lab) & region.indicator
        pieces.append(RegionMask(mesh, ind))
    pieces.sort(key=lambda r: (-r.area, int(r.indices[0])))
    return pieces


# ---------------------------------------------------------------------------
# sampling


def farthest_point_sampling(mesh: TriangleMesh, m: int, seed: int = 0, candidates=None) -> np.ndarray:
    """Greedy Euclidean farthest point sampling.

    The first sample is the first candidate when ``seed == 0`` and a seeded
    uniform draw otherwise; every later sample maximizes the distance to the
    chosen set (ties go to the lowest index). ``candidates`` restricts the
    samples to a subset of vertex indices (default: all vertices).
    """
    pool = np.arange(mesh.n_vertices) if candidates is None else np.asarray(candidates, dtype=np.int64)
    n = len(pool)
    if m > n:
        raise ValueError(f"cannot draw {m} samples from {n} vertices")
    if m <= 0:
        return np.empty(0, dtype=np.int64)
    x = mesh.vertices[pool]
    first = 0 if seed == 0 else int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = first
    dist = np.linalg.norm(x - x[first], axis=1)
    dist[first] = -1.0
    for s in range(1, m):
        nxt = int(np.argmax(dist))
        chosen[s] = nxt
        dist = np.minimum(dist, np.linalg.norm(x - x[nxt], axis=1))
        dist[chosen[: s + 1]] = -1.0
    return pool[chosen]

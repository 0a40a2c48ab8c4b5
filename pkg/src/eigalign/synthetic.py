"""Synthetic test geometry and planted-region instances."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import RegionMask, TriangleMesh, extract_submesh
from .operators import build_grid_domain
from .spectrum import dirichlet_spectrum


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Loop-style subdivided icosahedron projected to a sphere."""
    phi = (1.0 + 5**0.5) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=float) / np.linalg.norm(p) for p in verts]
    f = faces
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                p = v[a] + v[b]
                v.append(p / np.linalg.norm(p))
                cache[key] = len(v) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriangleMesh(radius * np.array(v), np.array(f))


def fibonacci_sphere(n: int) -> TriangleMesh:
    """Near-uniform closed sphere triangulation with exactly ``n`` vertices."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    theta = np.pi * (1.0 + 5**0.5) * i
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
    faces = ConvexHull(pts).simplices
    # orient outward
    p = pts[faces]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", normal, p.mean(axis=1)) < 0
    faces[flip] = faces[flip][:, ::-1]
    return TriangleMesh(pts, faces)


BUMPS = (
    ((1.0, 0.0, 0.0), 0.8, 0.35),
    ((-0.3, 0.9, 0.3), 0.5, 0.4),
    ((-0.2, -0.5, 0.85), 0.35, 0.45),
    ((-0.7, -0.4, -0.6), 0.6, 0.3),
    ((0.3, -0.8, -0.4), 0.25, 0.35),
    ((0.4, 0.5, -0.7), 0.45, 0.5),
)


def bumpy_blob(n: int = 3200, bumps=BUMPS, stretch=(1.3, 1.0, 0.8)) -> TriangleMesh:
    """Closed asymmetric surface: an ellipsoid carrying bumps of distinct sizes.

    ``bumps`` holds ``(direction, height, angular width)`` triples. The
    surface is a radial deformation of a Fibonacci sphere, so the
    triangulation stays valid and the geometry has no nontrivial symmetry.
    """
    sphere = fibonacci_sphere(n)
    d = sphere.vertices
    r = np.ones(len(d))
    for centre, height, width in bumps:
        c = np.asarray(centre) / np.linalg.norm(centre)
        ang = np.arccos(np.clip(d @ c, -1.0, 1.0))
        r += height * np.exp(-((ang / width) ** 2))
    pts = d * r[:, None] * np.asarray(stretch)
    return TriangleMesh(pts, sphere.faces)


def perturbed_grid(nx: int, ny: int, seed: int = 0, amplitude: float = 0.05) -> TriangleMesh:
    """Open nonflat patch: jittered ``nx x ny`` grid with a smooth height field."""
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.linspace(0, 1, nx), np.linspace(0, 1, ny))
    h = 0.8 / max(nx, ny)
    x = xs + amplitude * h * rng.standard_normal(xs.shape)
    y = ys + amplitude * h * rng.standard_normal(ys.shape)
    z = 0.15 * np.sin(3 * xs + 1) * np.cos(2 * ys) + 0.05 * xs * ys
    verts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            faces += [(a, a + 1, a + nx + 1), (a, a + nx + 1, a + nx)]
    return TriangleMesh(verts, np.array(faces))


# ---------------------------------------------------------------------------
# regions


def ball_mask(mesh: TriangleMesh, centre, radius: float) -> RegionMask:
    """Vertices within Euclidean distance ``radius`` of ``centre``."""
    d = np.linalg.norm(mesh.vertices - np.asarray(centre, dtype=float), axis=1)
    return RegionMask(mesh, d <= radius)


def ball_with_area(mesh: TriangleMesh, centre_vertex: int, fraction: float) -> RegionMask:
    """Euclidean ball around a vertex covering ``fraction`` of the total area."""
    x = mesh.vertices
    d = np.linalg.norm(x - x[centre_vertex], axis=1)
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(mesh.vertex_areas[order])
    cut = int(np.searchsorted(cum, fraction * cum[-1]))
    return ball_mask(mesh, x[centre_vertex], d[order[cut]])


def grid_mask(n: int, inside, side_length: float = 1.0) -> np.ndarray:
    """Boolean mask of grid vertices for which ``inside(x, y)`` holds."""
    mesh = build_grid_domain(n, side_length)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    return np.asarray(inside(x, y), dtype=bool)


def disc(cx, cy, r):
    return lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 <= r * r


def annulus(cx, cy, r_in, r_out):
    return lambda x, y: (r_in**2 < (x - cx) ** 2 + (y - cy) ** 2) & (
        (x - cx) ** 2 + (y - cy) ** 2 <= r_out**2
    )


def ellipse(cx, cy, a, b, angle=0.0):
    c, s = np.cos(angle), np.sin(angle)

    def inside(x, y):
        dx, dy = x - cx, y - cy
        u, w = c * dx + s * dy, -s * dx + c * dy
        return (u / a) ** 2 + (w / b) ** 2 <= 1.0

    return inside


def planted_instance(mesh: TriangleMesh, region: RegionMask, k: int, backend: str = "auto"):
    """Cut ``region`` out of ``mesh`` and compute its Dirichlet spectrum.

    Returns ``(submesh, vertex_map, spectrum)``.
    """
    sub, vmap = extract_submesh(mesh, region)
    return sub, vmap, dirichlet_spectrum(sub, k, backend=backend)


def disjoint_union(*meshes: TriangleMesh) -> TriangleMesh:
    """Treat several meshes as a single (disconnected) mesh."""
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    return TriangleMesh(np.vstack(verts), np.vstack(faces))

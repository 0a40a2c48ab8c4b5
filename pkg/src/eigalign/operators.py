"""Cotangent stiffness, lumped mass and Hamiltonian assembly with Dirichlet
boundary rows, the potential saturation map, and the planar grid domain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .mesh import MeshError, TriangleMesh


@dataclass(frozen=True, eq=False)
class OperatorPair:
    """Stiffness matrix ``W`` and diagonal lumped mass ``a`` of a mesh.

    Boundary rows of ``W`` are identity rows and boundary masses are zero,
    which imposes homogeneous Dirichlet conditions.
    """

    W: sparse.csr_matrix
    a: np.ndarray
    interior_index: np.ndarray
    n: int
    _blocks: dict = field(default_factory=dict, repr=False)

    @property
    def A(self) -> sparse.dia_matrix:
        return sparse.diags(self.a)

    @property
    def n_interior(self) -> int:
        return len(self.interior_index)

    @property
    def boundary_index(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.interior_index] = False
        return np.flatnonzero(mask)

    @property
    def W_interior(self) -> sparse.csc_matrix:
        """Interior-interior block of ``W`` (cached)."""
        if "W_II" not in self._blocks:
            idx = self.interior_index
            self._blocks["W_II"] = self.W[idx][:, idx].tocsc()
        return self._blocks["W_II"]

    @property
    def a_interior(self) -> np.ndarray:
        return self.a[self.interior_index]


def cotangent_weights(mesh: TriangleMesh):
    """Per-face corner cotangents and face areas.

    Returns ``cot`` of shape (f, 3) where ``cot[:, c]`` is the cotangent of the
    angle at corner ``c``, i.e. opposite the edge between the other two corners.
    """
    p = mesh.vertices[mesh.faces]
    cot = np.empty((mesh.n_faces, 3))
    areas = None
    for c in range(3):
        e1 = p[:, (c + 1) % 3] - p[:, c]
        e2 = p[:, (c + 2) % 3] - p[:, c]
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        if areas is None:
            areas = 0.5 * cross
            guard = 1e-14 * mesh.bbox_scale**2
            if (areas <= guard).any():
                raise MeshError(
                    f"face {int(np.argmax(areas <= guard))} is degenerate; cotangent undefined"
                )
        cot[:, c] = np.einsum("ij,ij->i", e1, e2) / cross
    return cot, areas


def assemble_laplacian(mesh: TriangleMesh) -> OperatorPair:
    """Assemble the Dirichlet cotangent stiffness and lumped mass matrices.

    Interior edges get ``-(cot a + cot b) / 2``, interior diagonals the
    negated row sum over all neighbours, boundary rows become identity rows,
    and interior masses are a third of the incident triangle areas.
    """
    n = mesh.n_vertices
    t = mesh.faces
    cot, areas = cotangent_weights(mesh)
    # edge (c+1, c+2) is opposite corner c
    i = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    j = np.concatenate([t[:, 2], t[:, 0], t[:, 1]])
    w = 0.5 * np.concatenate([cot[:, 0], cot[:, 1], cot[:, 2]])
    off = sparse.coo_matrix((w, (i, j)), shape=(n, n)).tocsr()
    off = off + off.T
    diag = np.asarray(off.sum(axis=1)).ravel()

    bdr = mesh.boundary_vertex
    keep = (~bdr).astype(float)
    off = sparse.diags(keep) @ off @ sparse.diags(keep)
    diag = np.where(bdr, 1.0, diag)
    W = (sparse.diags(diag) - off).tocsr()
    W.eliminate_zeros()
    W.sort_indices()

    a = np.bincount(t.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n)
    a[bdr] = 0.0
    a.setflags(write=False)
    interior = np.flatnonzero(~bdr)
    interior.setflags(write=False)
    return OperatorPair(W=W, a=a, interior_index=interior, n=n)


def assemble_hamiltonian(ops: OperatorPair, v) -> sparse.csr_matrix:
    """Return ``W + A diag(v)``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (ops.n,):
        raise ValueError(f"potential has shape {v.shape}, expected ({ops.n},)")
    if (v < 0).any():
        raise ValueError("potential must be nonnegative")
    return (ops.W + sparse.diags(ops.a * v)).tocsr()


def export_coo(matrix, path):
    """Write a sparse matrix as ``row col value`` text lines."""
    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, x in zip(coo.row[order].tolist(), coo.col[order].tolist(), coo.data[order].tolist()):
            fh.write(f"{r} {c} {x!r}\n")


# ---------------------------------------------------------------------------
# potentials


def saturation(u, tau: float) -> np.ndarray:
    """Smooth map of an unconstrained parameter onto (0, tau)."""
    return 0.5 * tau * (np.tanh(u) + 1.0)


def saturation_derivative(u, tau: float) -> np.ndarray:
    return 0.5 * tau * (1.0 - np.tanh(u) ** 2)


def inverse_saturation(v, tau: float, clip: float = 1e-3) -> np.ndarray:
    """Parameter ``u`` with ``saturation(u, tau) == v``.

    ``v`` is first clipped to ``[clip * tau, (1 - clip) * tau]``.
    """
    v = np.clip(np.asarray(v, dtype=float), clip * tau, (1.0 - clip) * tau)
    return np.arctanh(2.0 * v / tau - 1.0)


@dataclass
class PotentialField:
    """Nonnegative per-vertex potential, optionally carrying its parameter ``u``."""

    values: np.ndarray
    tau: float
    parameter: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if (self.values < 0).any():
            raise ValueError("potential must be nonnegative")

    @classmethod
    def from_parameter(cls, u, tau: float) -> "PotentialField":
        u = np.asarray(u, dtype=float)
        return cls(saturation(u, tau), tau, u.copy())

    def __len__(self):
        return len(self.values)

    def region(self, threshold: float = 0.5) -> np.ndarray:
        """Vertices whose potential is below ``threshold * tau``."""
        return self.values < threshold * self.tau

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("vertex,v\n")
            for i, x in enumerate(self.values.tolist()):
                fh.write(f"{i},{x!r}\n")


def step_potential(region_indicator, tau: float) -> np.ndarray:
    """0 inside the region, ``tau`` elsewhere."""
    return np.where(np.asarray(region_indicator, dtype=bool), 0.0, float(tau))


# ---------------------------------------------------------------------------
# planar grid


def build_grid_domain(n: int, side_length: float = 1.0) -> TriangleMesh:
    """``n x n`` vertex Cartesian grid over ``[0, side]^2``.

    Vertex ``(i, j)`` (column ``i`` along x, row ``j`` along y) has index
    ``j * n + i``. Every cell is split along its lower-left to upper-right
    diagonal.
    """
    if n < 3:
        raise ValueError("grid needs at least 3 vertices per side")
    xs = np.linspace(0.0, side_length, n)
    X, Y = np.meshgrid(xs, xs)
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(n * n)])
    ii, jj = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    ll = (jj * n + ii).ravel()
    lr, ul, ur = ll + 1, ll + n, ll + n + 1
    faces = np.concatenate([np.column_stack([ll, lr, ur]), np.column_stack([ll, ur, ul])])
    return TriangleMesh(verts, faces)

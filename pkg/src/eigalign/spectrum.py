"""Smallest eigenpairs of the pencil ``(W + A diag(v), A)`` restricted to
interior vertices, and their derivatives with respect to the potential."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .mesh import TriangleMesh
from .operators import OperatorPair, assemble_laplacian

DENSE_LIMIT = 600


class ConvergenceError(RuntimeError):
    """The iterative eigensolver hit its iteration limit."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class DegenerateSpectrumWarning(UserWarning):
    """Two requested eigenvalues are (numerically) equal."""


@dataclass
class Spectrum:
    """``k`` ascending eigenvalues with A-orthonormal eigenvectors.

    ``eigenvectors`` has one column per eigenvalue and is zero on boundary
    vertices. It is ``None`` for spectra read from eigenvalue-only files.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    residual_norms: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def min_gap(self) -> float:
        if self.k < 2:
            return np.inf
        return float(np.diff(self.eigenvalues).min())

    def is_degenerate(self, rtol: float = 1e-8) -> bool:
        return self.min_gap() < rtol * abs(self.eigenvalues[-1])

    def truncated(self, k: int) -> "Spectrum":
        vecs = None if self.eigenvectors is None else self.eigenvectors[:, :k]
        res = None if self.residual_norms is None else self.residual_norms[:k]
        return Spectrum(self.eigenvalues[:k].copy(), vecs, res)

    def to_json(self, include_vectors: bool = False) -> dict:
        out = {"k": self.k, "eigenvalues": [float(x) for x in self.eigenvalues]}
        if include_vectors and self.eigenvectors is not None:
            out["eigenvectors"] = self.eigenvectors.tolist()
        return out


def write_spectrum(spec: Spectrum, path, include_vectors: bool = False):
    with open(path, "w") as fh:
        json.dump(spec.to_json(include_vectors), fh, indent=1)
        fh.write("\n")


def read_spectrum(path) -> Spectrum:
    """Load a spectrum JSON file ``{"k": .., "eigenvalues": [..]}``."""
    with open(path) as fh:
        data = json.load(fh)
    return spectrum_from_json(data)


def spectrum_from_json(data: dict) -> Spectrum:
    try:
        lam = np.asarray(data["eigenvalues"], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise ValueError("spectrum JSON needs an 'eigenvalues' list of numbers") from None
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("'eigenvalues' must be a nonempty flat list")
    if "k" in data and int(data["k"]) != lam.size:
        raise ValueError(f"'k' = {data['k']} disagrees with {lam.size} eigenvalues")
    vecs = data.get("eigenvectors")
    if vecs is not None:
        vecs = np.asarray(vecs, dtype=float)
        if vecs.ndim != 2 or vecs.shape[1] != lam.size:
            raise ValueError("'eigenvectors' must be an n x k row-major array")
    return Spectrum(lam, vecs)


# ---------------------------------------------------------------------------
# solvers


def _relative_residuals(K, m, vecs, lam):
    """``|K y - lam M y| / (|K y| + lam' |M y|)`` per column.

    ``lam'`` is ``|lam|`` floored at ``1e-2 lam_k`` and at ``1e-6`` of a
    cheap largest-eigenvalue bound, so null modes of closed meshes get a
    meaningful relative scale.
    """
    KY = K @ vecs
    MY = m[:, None] * vecs
    r = np.linalg.norm(KY - MY * lam, axis=0)
    lam_bound = abs(K).sum(axis=1).max() / m.min()
    floor = max(1e-2 * float(np.abs(lam).max()), 1e-6 * float(lam_bound))
    scale = np.linalg.norm(KY, axis=0) + np.maximum(np.abs(lam), floor) * np.linalg.norm(MY, axis=0)
    return r / np.where(scale > 0, scale, 1.0)


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _dense_eigs(K, m, k):
    # A is diagonal, so its Cholesky factor is diag(sqrt(a))
    d = 1.0 / np.sqrt(m)
    C = K.toarray() if sparse.issparse(K) else np.array(K)
    C = d[:, None] * C * d[None, :]
    C = 0.5 * (C + C.T)
    lam, Y = scipy.linalg.eigh(C, subset_by_index=[0, k - 1], driver="evr")
    return lam, d[:, None] * Y


def _lanczos(K, M, nev, shift, solve, x0, tol, maxiter):
    n = K.shape[0]
    op = LinearOperator((n, n), matvec=solve, dtype=float)
    try:
        return eigsh(
            K, nev, M, sigma=shift, which="LM", OPinv=op, v0=x0,
            tol=tol, maxiter=maxiter, ncv=min(n, max(2 * nev + 1, 20)),
        )
    except ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"eigensolver did not converge ({len(exc.eigenvalues)} of {nev} pairs)"
        ) from None


def _shift_invert_eigs(K, m, k, x0, tol, maxiter, shift, rng):
    """ARPACK Lanczos on ``(K - shift M)^{-1} M`` for the ``k`` eigenvalues
    nearest ``shift`` (the smallest ones, since ``shift`` lies below them).

    Single-vector Lanczos can miss copies of a repeated eigenvalue, so the
    result is checked by a second run on the complement of the computed
    eigenvectors; anything found below the current ``lambda_k`` is merged in.
    """
    M = sparse.diags(m).tocsc()
    lu = splu((K - shift * M).tocsc(), permc_spec="MMD_AT_PLUS_A")
    lam, vecs = _lanczos(K, M, k, shift, lu.solve, x0, tol, maxiter)
    n = K.shape[0]
    while vecs.shape[1] < n - 1:
        Q, MQ = vecs, m[:, None] * vecs

        def deflated(b, Q=Q, MQ=MQ):
            x = lu.solve(b)
            return x - Q @ (MQ.T @ x)

        start = rng.standard_normal(n)
        start -= Q @ (MQ.T @ start)
        extra, y = _lanczos(K, M, 1, shift, deflated, start, tol, maxiter)
        if extra[0] >= lam.max() * (1 + 1e-10) + 1e-12 * abs(shift):
            break
        y = y[:, 0] - Q @ (MQ.T @ y[:, 0])
        y /= np.sqrt(y @ (m * y))
        lam = np.append(lam, extra)
        vecs = np.column_stack([vecs, y])
    order = np.argsort(lam)[:k]
    return lam[order], vecs[:, order]


def solve_generalized(
    ops: OperatorPair,
    v=None,
    k: int = 20,
    backend: str = "auto",
    initial=None,
    tol: float = 1e-10,
    maxiter: int = 300,
    seed: int = 0,
) -> Spectrum:
    """Smallest ``k`` eigenpairs of ``(W + A diag(v)) psi = lambda A psi``.

    Only the interior block is solved; eigenvectors are re-embedded with zeros
    on boundary vertices.

    Parameters
    ----------
    backend : {"auto", "dense", "iterative"}
        ``auto`` uses the dense solver up to ``DENSE_LIMIT`` interior vertices.
    initial : ndarray, optional
        Full-length vectors whose sum starts the iterative backend's Lanczos
        process.
    """
    idx = ops.interior_index
    n_int = len(idx)
    if k < 1 or k > n_int:
        raise ValueError(f"k = {k} must lie in [1, {n_int}] (interior vertex count)")
    m = ops.a_interior
    K = ops.W_interior
    if v is not None:
        v = np.asarray(v, dtype=float)
        if v.shape != (ops.n,):
            raise ValueError(f"potential has shape {v.shape}, expected ({ops.n},)")
        if (v < 0).any():
            raise ValueError("potential must be nonnegative")
        K = (K + sparse.diags(m * v[idx])).tocsc()
    if backend == "auto":
        backend = "dense" if n_int <= DENSE_LIMIT else "iterative"
    if backend == "iterative" and k >= n_int - 1:
        # Lanczos needs k < n - 1
        backend = "dense"

    if backend == "dense":
        lam, Y = _dense_eigs(K, m, k)
    elif backend == "iterative":
        singular = n_int == ops.n and (v is None or not (v[idx] > 0).any())
        # closed mesh with null potential has constants in the kernel
        shift = -1e-6 * float(np.mean(K.diagonal() / m)) if singular else 0.0
        rng = np.random.default_rng(seed)
        if initial is not None:
            x0 = np.asarray(initial)[idx].sum(axis=1)
        else:
            x0 = rng.standard_normal(n_int)
        lam, Y = _shift_invert_eigs(K, m, k, x0, tol, maxiter, shift, rng)
        res = _relative_residuals(K, m, Y, lam)
        if (res > max(1e3 * tol, 1e-8)).any():
            raise ConvergenceError(
                f"eigensolver residual {res.max():.3e} above tolerance", residuals=res
            )
    else:
        raise ValueError(f"unknown backend {backend!r}")

    Y = _fix_signs(Y)
    res = _relative_residuals(K, m, Y, lam)
    vecs = np.zeros((ops.n, k))
    vecs[idx] = Y
    return Spectrum(np.asarray(lam), vecs, res)


def dirichlet_spectrum(mesh: TriangleMesh, k: int, backend: str = "auto", ops=None) -> Spectrum:
    """Laplacian eigenpairs with homogeneous Dirichlet boundary conditions."""
    if ops is None:
        ops = assemble_laplacian(mesh)
    return solve_generalized(ops, None, k, backend=backend)


def eigenvalue_gradient(spec: Spectrum, ops: OperatorPair, warn: bool = True) -> np.ndarray:
    """``G[j, i] = d lambda_i / d v_j = a_j psi_i(j)^2``.

    Exact for simple eigenvalues; a :class:`DegenerateSpectrumWarning` is
    issued when two eigenvalues are closer than ``1e-8 * lambda_k``.
    """
    if warn and spec.is_degenerate():
        warnings.warn(
            f"eigenvalue gap {spec.min_gap():.3e} is below 1e-8 * lambda_k; "
            "derivatives are ill-defined",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    return ops.a[:, None] * spec.eigenvectors**2

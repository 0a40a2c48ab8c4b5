"""Partial-shape localization by eigenvalue alignment, candidate selection
from eigenfunction-weighted descriptor integrals, and multi-piece labeling."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .align import AlignmentProblem, OptimizationTrace, extract_region, optimize
from .mesh import RegionMask, TriangleMesh, connected_components, farthest_point_sampling
from .operators import OperatorPair, PotentialField, assemble_laplacian, inverse_saturation
from .spectrum import ConvergenceError, Spectrum, dirichlet_spectrum

logger = logging.getLogger(__name__)


@dataclass
class LocalizationConfig:
    """Settings for :func:`localize`.

    ``widths`` are multipliers of ``sqrt(total area)`` giving the squared
    width ``s^2`` of each Gaussian initialization. The extracted region is
    ``{v < region_cut * mu_k}`` (see :func:`eigalign.align.extract_region`).
    """

    k: int = 20
    m: int = 20
    widths: tuple = (1.0, 2.0)
    tau_factor: float = 10.0
    selection_count: int = 5
    region_cut: float = 1.0
    max_iters: int = 300
    tol_energy: float = 1e-8
    backend: str = "auto"
    warm_start: bool = False
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ValueError("k and m must be positive")
        if not self.widths or min(self.widths) <= 0:
            raise ValueError("widths must be positive")
        if self.tau_factor <= 1:
            raise ValueError("tau_factor must exceed 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class Candidate:
    init_id: int
    centre: int
    width: float
    potential: PotentialField
    region: RegionMask
    eigenvalues: np.ndarray
    energy: float
    coefficients: np.ndarray
    trace: OptimizationTrace
    selection_distance: float | None = None
    iou: float | None = None
    error: str | None = None

    @property
    def converged(self) -> bool:
        return self.error is None and self.trace.converged

    def summary(self) -> dict:
        out = {
            "init_id": self.init_id,
            "energy": self.energy,
            "selection_distance": self.selection_distance,
            "iterations": self.trace.iterations,
            "stop_reason": self.trace.reason,
        }
        if self.iou is not None:
            out["iou"] = self.iou
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class LocalizationResult:
    best: Candidate
    candidates: list
    ranking: list
    selection: str
    target_coefficients: np.ndarray | None = None
    flags: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# initialization and descriptors


def initialization_centres(mesh: TriangleMesh, cfg: LocalizationConfig) -> np.ndarray:
    """Farthest-point centres among the non-boundary vertices."""
    inner = np.flatnonzero(~mesh.boundary_vertex)
    return farthest_point_sampling(mesh, min(cfg.m, len(inner)), seed=cfg.seed, candidates=inner)


def gaussian_initialization(mesh: TriangleMesh, centre, width2, tau: float):
    """Parameter ``u`` whose saturated potential is an inverted Gaussian well.

    ``centre`` and ``width2`` may also be sequences, giving one well per
    entry (the potential takes the deepest well at each vertex).
    """
    centres = np.atleast_1d(centre)
    widths = np.broadcast_to(np.asarray(width2, dtype=float), centres.shape)
    depth = np.zeros(mesh.n_vertices)
    for c, w2 in zip(centres, widths):
        d2 = np.sum((mesh.vertices - mesh.vertices[c]) ** 2, axis=1)
        depth = np.maximum(depth, np.exp(-d2 / (2.0 * w2)))
    return inverse_saturation(tau * (1.0 - depth), tau, clip=1e-3)


def make_initializations(mesh: TriangleMesh, cfg: LocalizationConfig, tau: float, piece_areas=None):
    """``len(widths)`` wells around each of ``m`` farthest-point centres.

    With ``piece_areas`` of length ``p > 1`` (a partial shape in several
    pieces), every initialization instead holds ``p`` wells, at the centre
    and the next ``p - 1`` centres of the sampling order, and well ``i`` has
    ``s^2 = w * piece_areas[i] / pi``: its spread matches the radius of a
    disc with that piece's area.

    Returns a list of ``(centre, width2, u)``; the list index is the init id.
    """
    centres = initialization_centres(mesh, cfg)
    root_area = float(np.sqrt(mesh.total_area()))
    areas = np.asarray(piece_areas if piece_areas is not None else [], dtype=float)
    p = len(areas)
    out = []
    for j, c in enumerate(centres):
        for w in cfg.widths:
            if p > 1:
                group = centres[(j + np.arange(p)) % len(centres)]
                s2 = w * areas / np.pi
                out.append((int(c), float(s2[0]), gaussian_initialization(mesh, group, s2, tau)))
            else:
                s2 = w * root_area
                out.append((int(c), s2, gaussian_initialization(mesh, int(c), s2, tau)))
    return out


def angle_defect(mesh: TriangleMesh) -> np.ndarray:
    """``2 pi - sum of angles`` at interior vertices, ``pi - sum`` on the boundary."""
    p = mesh.vertices[mesh.faces]
    total = np.zeros(mesh.n_vertices)
    for c in range(3):
        e1 = p[:, (c + 1) % 3] - p[:, c]
        e2 = p[:, (c + 2) % 3] - p[:, c]
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        ang = np.arctan2(cross, np.einsum("ij,ij->i", e1, e2))
        total += np.bincount(mesh.faces[:, c], weights=ang, minlength=mesh.n_vertices)
    full = np.where(mesh.boundary_vertex, np.pi, 2.0 * np.pi)
    return full - total


def descriptor_field(mesh: TriangleMesh) -> np.ndarray:
    """Pointwise Gaussian curvature: angle defect over barycentric area."""
    return angle_defect(mesh) / mesh.vertex_areas


def selection_coefficients(spec: Spectrum, ops: OperatorPair, F, count: int = 5) -> np.ndarray:
    """``c_i = sum_j a_j psi_i(j)^2 F(j)`` for the first ``count`` eigenfunctions."""
    if spec.eigenvectors is None or spec.k < count:
        raise ValueError(f"need at least {count} eigenvectors")
    F = np.broadcast_to(np.asarray(F, dtype=float), (ops.n,))
    psi = spec.eigenvectors[:, :count]
    return (ops.a * F) @ psi**2


def iou(region: RegionMask, truth: RegionMask) -> float:
    """Intersection over union of two regions, by vertex area."""
    if region.mesh is not truth.mesh and region.mesh.n_vertices != truth.mesh.n_vertices:
        raise ValueError("regions live on different meshes")
    union = (region | truth).area
    if union == 0:
        return 1.0
    return (region & truth).area / union


# ---------------------------------------------------------------------------
# candidate runs


def _run_one(problem: AlignmentProblem, u0):
    """Optimize one init; returns ``(u, trace, spectrum, error)``."""
    try:
        pot, trace = optimize(problem, u0)
    except (ConvergenceError, ValueError, RuntimeError) as exc:
        trace = getattr(exc, "trace", None) or OptimizationTrace(reason="failed")
        return u0, trace, None, f"{type(exc).__name__}: {exc}"
    try:
        spec = problem.spectrum(pot.values)
    except ConvergenceError as exc:
        return pot.parameter, trace, None, f"ConvergenceError: {exc}"
    return pot.parameter, trace, spec, None


def _run_batch(problem, inits, workers):
    if workers <= 1 or len(inits) <= 1:
        return [_run_one(problem, u) for _, _, u in inits]
    workers = min(workers, len(inits), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_one, problem, u) for _, _, u in inits]
        return [f.result() for f in futures]


def _as_target(mu, k):
    if isinstance(mu, Spectrum):
        mu = mu.eigenvalues
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.size < k:
        raise ValueError(f"target has {mu.size} eigenvalues, need k = {k}")
    return mu[:k]


def localize(
    meshX: TriangleMesh,
    mu=None,
    meshY: TriangleMesh | None = None,
    cfg: LocalizationConfig | None = None,
    truth: RegionMask | None = None,
    descriptor=descriptor_field,
    opsX: OperatorPair | None = None,
    inits=None,
) -> LocalizationResult:
    """Find the region of ``meshX`` whose Dirichlet spectrum matches ``mu``.

    Every initialization is optimized independently. When ``meshY`` is given,
    candidates are ranked by the squared distance between their selection
    coefficients and those of ``meshY``; otherwise by alignment energy. ``mu``
    defaults to the Dirichlet spectrum of ``meshY``. ``descriptor`` maps a
    mesh to a per-vertex scalar field. ``inits`` overrides the Gaussian bank
    with ``(centre, width2, u)`` tuples.
    """
    cfg = cfg or LocalizationConfig()
    if mu is None and meshY is None:
        raise ValueError("need a target spectrum or a partial mesh")
    opsX = opsX or assemble_laplacian(meshX)

    target = None
    if meshY is not None:
        opsY = assemble_laplacian(meshY)
        kY = max(cfg.k, cfg.selection_count)
        specY = dirichlet_spectrum(meshY, kY, backend=cfg.backend, ops=opsY)
        target = selection_coefficients(specY, opsY, descriptor(meshY), cfg.selection_count)
        if mu is None:
            mu = specY.eigenvalues
    mu = _as_target(mu, cfg.k)

    problem = AlignmentProblem(
        opsX,
        mu,
        tau=cfg.tau_factor * mu[-1],
        max_iters=cfg.max_iters,
        tol_energy=cfg.tol_energy,
        backend=cfg.backend,
        warm_start=cfg.warm_start,
    )
    if inits is None:
        areas = None
        if meshY is not None:
            pieces = connected_components(RegionMask(meshY, np.ones(meshY.n_vertices, dtype=bool)))
            areas = sorted((p.area for p in pieces), reverse=True)
        inits = make_initializations(meshX, cfg, problem.tau, areas)
    F = descriptor(meshX) if target is not None else None
    level = cfg.region_cut * mu[-1]

    candidates = []
    for init_id, ((c, s2, _), (u, trace, spec, err)) in enumerate(
        zip(inits, _run_batch(problem, inits, cfg.workers))
    ):
        pot = PotentialField.from_parameter(u, problem.tau)
        if spec is None:
            region = RegionMask(meshX, np.zeros(meshX.n_vertices, dtype=bool))
            lam = np.full(cfg.k, np.nan)
            energy, coeffs = np.inf, np.full(cfg.selection_count, np.nan)
        else:
            region = extract_region(meshX, opsX, pot, spec, level, k=cfg.k)
            lam = spec.eigenvalues[: cfg.k]
            energy = float(np.sum(((lam - mu) / mu) ** 2))
            coeffs = selection_coefficients(spec, opsX, F if F is not None else 0.0, cfg.selection_count)
        cand = Candidate(init_id, c, s2, pot, region, lam, energy, coeffs, trace, error=err)
        if target is not None and spec is not None:
            cand.selection_distance = float(np.sum((coeffs - target) ** 2))
        if truth is not None:
            cand.iou = iou(region, truth)
        candidates.append(cand)

    selection = "descriptor" if target is not None else "energy"
    flags = [] if target is not None else ["energy_fallback"]

    def key(c):
        primary = c.selection_distance if selection == "descriptor" else c.energy
        if primary is None or not np.isfinite(primary):
            primary = np.inf
        return (primary, c.init_id)

    ranking = [c.init_id for c in sorted(candidates, key=key)]
    if not any(c.converged for c in candidates):
        flags.append("no_candidate_converged")
    best = candidates[ranking[0]]
    return LocalizationResult(best, candidates, ranking, selection, target, flags)


# ---------------------------------------------------------------------------
# multi-piece labeling


@dataclass
class PieceLabeling:
    assignment: dict
    votes: np.ndarray
    consistent: bool


def _component_masses(pieces, a, vecs):
    """Rows: components, columns: eigenfunctions."""
    return np.array([(a[p.indicator, None] * vecs[p.indicator] ** 2).sum(axis=0) for p in pieces])


def _argmax_low(x, tol=1e-9):
    return int(np.flatnonzero(x >= x.max() - tol)[0])


def label_pieces(
    region: RegionMask,
    specX: Spectrum,
    opsX: OperatorPair,
    meshY: TriangleMesh,
    specY: Spectrum,
    opsY: OperatorPair | None = None,
) -> PieceLabeling:
    """Match the components of a localized region to the pieces of ``meshY``.

    Eigenfunction ``i`` votes for the pair (region component, piece of Y)
    where each carries the most of its mass. Each region component takes the
    piece with the most votes; ties go to the lower index. ``consistent`` is
    False when component counts differ or the map is not a bijection.
    """
    opsY = opsY or assemble_laplacian(meshY)
    xs = connected_components(region)
    ys = connected_components(RegionMask(meshY, np.ones(meshY.n_vertices, dtype=bool)))
    if not xs or not ys:
        raise ValueError("both sides need at least one component")
    k = min(specX.k, specY.k)
    mx = _component_masses(xs, opsX.a, specX.eigenvectors[:, :k])
    my = _component_masses(ys, opsY.a, specY.eigenvectors[:, :k])
    votes = np.zeros((len(xs), len(ys)), dtype=int)
    for i in range(k):
        votes[_argmax_low(mx[:, i]), _argmax_low(my[:, i])] += 1
    assignment = {}
    for cx in range(len(xs)):
        if votes[cx].any():
            assignment[cx] = _argmax_low(votes[cx].astype(float), tol=0.5)
    bijective = len(assignment) == len(xs) and len(set(assignment.values())) == len(assignment)
    consistent = len(xs) == len(ys) and bijective
    return PieceLabeling(assignment, votes, consistent)

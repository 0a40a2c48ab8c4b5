"""Eigenvalue alignment: objective, gradients and the descent loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .mesh import RegionMask, TriangleMesh, connected_components
from .operators import (
    OperatorPair,
    PotentialField,
    saturation,
    saturation_derivative,
)
from .spectrum import ConvergenceError, Spectrum, solve_generalized

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The objective evaluated to NaN at the starting point."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


def alignment_energy(lam, mu) -> float:
    """Weighted squared distance ``sum_i (lam_i - mu_i)^2 / mu_i^2``."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if lam.shape != mu.shape:
        raise ValueError(f"length mismatch: {lam.shape} vs {mu.shape}")
    return float(np.sum(((lam - mu) / mu) ** 2))


@dataclass
class AlignmentProblem:
    """Align the ``k`` lowest eigenvalues of ``W + A diag(v)`` to ``mu``.

    ``mode="saturated"`` optimizes ``u`` with ``v = tau/2 (tanh u + 1)``;
    ``mode="projected"`` optimizes ``v >= 0`` directly.
    """

    ops: OperatorPair
    mu: np.ndarray
    tau: float | None = None
    mode: str = "saturated"
    max_iters: int = 500
    tol_energy: float = 1e-8
    tol_grad: float | None = None
    backend: str = "auto"
    memory: int = 10
    warm_start: bool = False
    max_seconds: float | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        if self.mu.size < 1:
            raise ValueError("target spectrum is empty")
        if (self.mu <= 0).any():
            raise ValueError("target eigenvalues must be strictly positive")
        if (np.diff(self.mu) < 0).any():
            raise ValueError("target eigenvalues must be ascending")
        if self.mu.size > self.ops.n_interior:
            raise ValueError(
                f"k = {self.mu.size} exceeds the {self.ops.n_interior} interior vertices"
            )
        if self.tau is None:
            self.tau = 10.0 * float(self.mu[-1])
        if self.tau <= self.mu[-1]:
            raise ValueError(f"tau = {self.tau} must exceed mu_k = {self.mu[-1]}")
        if self.tol_grad is None:
            self.tol_grad = 1e-6 * self.k / self.tau
        if self.mode not in ("saturated", "projected"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def k(self) -> int:
        return self.mu.size

    @property
    def n(self) -> int:
        return self.ops.n

    def spectrum(self, v, initial=None) -> Spectrum:
        """Eigenpairs at potential ``v``: ``k`` of them, plus one guard pair
        when the mesh allows it (used to detect a cluster straddling ``k``)."""
        kk = min(self.k + 1, self.ops.n_interior)
        return solve_generalized(self.ops, v, kk, backend=self.backend, initial=initial)

    def energy(self, v) -> float:
        return alignment_energy(self.spectrum(v).eigenvalues[: self.k], self.mu)

    def potential_gradient(self, spec: Spectrum) -> np.ndarray:
        """dE/dv from one solved spectrum.

        Inside a cluster of numerically equal eigenvalues (gap below
        ``1e-8 lambda_k``) the individual eigenvectors are an arbitrary basis
        of the eigenspace, so each squared eigenvector is replaced by the
        cluster mean, which does not depend on that choice.
        """
        k = self.k
        lam = spec.eigenvalues
        sq = spec.eigenvectors**2
        tol = 1e-8 * abs(lam[k - 1])
        start = 0
        for i in range(1, len(lam) + 1):
            if i == len(lam) or lam[i] - lam[i - 1] > tol:
                if i - start > 1:
                    sq[:, start:i] = sq[:, start:i].mean(axis=1, keepdims=True)
                start = i
        r = 2.0 * (lam[:k] - self.mu) / self.mu**2
        return self.ops.a * (sq[:, :k] @ r)

    def evaluate(self, x, initial=None):
        """Energy, gradient and spectrum at ``x`` (``u`` or ``v`` by mode)."""
        x = np.asarray(x, dtype=float)
        v = saturation(x, self.tau) if self.mode == "saturated" else x
        spec = self.spectrum(v, initial)
        e = alignment_energy(spec.eigenvalues[: self.k], self.mu)
        g = self.potential_gradient(spec)
        if self.mode == "saturated":
            g = g * saturation_derivative(x, self.tau)
        return e, g, spec


def energy_gradient_saturated(problem: AlignmentProblem, u) -> np.ndarray:
    """Gradient of the saturated objective with respect to ``u``."""
    v = saturation(np.asarray(u, dtype=float), problem.tau)
    spec = problem.spectrum(v)
    return problem.potential_gradient(spec) * saturation_derivative(u, problem.tau)


def projected_gradient_step(problem: AlignmentProblem, v, alpha: float) -> np.ndarray:
    """One step ``max(v - alpha * grad, 0)`` of projected gradient descent."""
    v = np.asarray(v, dtype=float)
    if (v < 0).any():
        raise ValueError("potential must be nonnegative")
    g = problem.potential_gradient(problem.spectrum(v))
    return np.maximum(v - alpha * g, 0.0)


@dataclass
class OptimizationTrace:
    energies: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    final: np.ndarray | None = None
    converged: bool = False
    reason: str = ""
    wall_time: float = 0.0
    evaluations: int = 0
    degenerate_iterations: int = 0
    snapshots: list = field(default_factory=list)

    def record(self, energy, grad_norm, step):
        self.energies.append(float(energy))
        self.grad_norms.append(float(grad_norm))
        self.steps.append(float(step))

    @property
    def iterations(self) -> int:
        return max(len(self.energies) - 1, 0)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,energy,grad_norm,step\n")
            for i, (e, g, s) in enumerate(zip(self.energies, self.grad_norms, self.steps)):
                fh.write(f"{i},{e!r},{g!r},{s!r}\n")


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    s, y = S[-1], Y[-1]
    q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def optimize(problem: AlignmentProblem, init, callback=None, snapshot_every: int = 0):
    """Minimize the alignment energy from ``init``.

    Saturated mode runs limited-memory BFGS with a backtracking Armijo line
    search (initial step 1, c = 1e-4, halving, at most 40 backtracks).
    Projected mode runs fixed-step projected gradient descent, halving the
    step whenever the energy would increase.

    Stops after ``max_iters`` iterations, when the energy decreased by a
    relative amount below ``tol_energy`` over the last 5 iterations, when the
    gradient infinity norm drops below ``tol_grad``, when the line search
    fails, or when ``max_seconds`` elapses.

    Returns
    -------
    potential : PotentialField
    trace : OptimizationTrace
    """
    if problem.mode == "projected":
        return _optimize_projected(problem, init, callback, snapshot_every)

    t0 = time.perf_counter()
    trace = OptimizationTrace()
    x = np.array(init, dtype=float)
    if x.shape != (problem.n,) or not np.isfinite(x).all():
        raise ValueError("initialization must be a finite vector of length n")

    f, g, spec = problem.evaluate(x)
    trace.evaluations += 1
    if not np.isfinite(f):
        trace.final = x
        trace.reason = "diverged"
        raise DivergenceError("energy is NaN at the initial point", trace)
    trace.record(f, np.abs(g).max(), 0.0)
    S, Y = [], []
    c1, shrink, max_backtracks = 1e-4, 0.5, 40

    def warm(spec):
        return spec.eigenvectors if problem.warm_start else None

    for it in range(problem.max_iters):
        if callback is not None:
            callback(it, x, f, spec)
        if snapshot_every and it % snapshot_every == 0:
            trace.snapshots.append((it, spec.eigenvectors.copy()))
        if spec.is_degenerate():
            trace.degenerate_iterations += 1
        gnorm = np.abs(g).max()
        if gnorm < problem.tol_grad:
            trace.converged, trace.reason = True, "gradient"
            break
        if problem.max_seconds is not None and time.perf_counter() - t0 > problem.max_seconds:
            trace.reason = "budget"
            break

        accepted = False
        for attempt in range(2):
            if S:
                d = _two_loop(g, S, Y)
            else:
                d = -g / gnorm
            slope = g @ d
            if slope >= 0:
                S.clear(), Y.clear()
                d = -g / gnorm
                slope = g @ d
            step = 1.0
            for _ in range(max_backtracks):
                x_new = x + step * d
                try:
                    f_new, g_new, spec_new = problem.evaluate(x_new, warm(spec))
                except (ConvergenceError, np.linalg.LinAlgError, RuntimeError) as exc:
                    logger.debug("evaluation failed at trial step %g: %s", step, exc)
                    f_new = np.nan
                trace.evaluations += 1
                if np.isfinite(f_new) and f_new <= f + c1 * step * slope and f_new < f:
                    accepted = True
                    break
                step *= shrink
            if accepted or not S:
                break
            # retry once from steepest descent with a fresh memory
            S.clear(), Y.clear()
        if not accepted:
            trace.reason = "line_search"
            break

        s_vec, y_vec = x_new - x, g_new - g
        if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > problem.memory:
                S.pop(0), Y.pop(0)
        x, f, g, spec = x_new, f_new, g_new, spec_new
        trace.record(f, np.abs(g).max(), step)

        E = trace.energies
        if len(E) > 5 and (E[-6] - E[-1]) <= problem.tol_energy * E[-6]:
            trace.converged, trace.reason = True, "energy"
            break
        if f == 0.0:
            trace.converged, trace.reason = True, "energy"
            break
    else:
        trace.reason = "max_iters"

    trace.final = x
    trace.wall_time = time.perf_counter() - t0
    return PotentialField.from_parameter(x, problem.tau), trace


def _optimize_projected(problem, init, callback, snapshot_every, max_halvings=40):
    t0 = time.perf_counter()
    trace = OptimizationTrace()
    v = np.array(init, dtype=float)
    if v.shape != (problem.n,) or not np.isfinite(v).all() or (v < 0).any():
        raise ValueError("initialization must be a finite nonnegative vector of length n")
    f, g, spec = problem.evaluate(v)
    trace.evaluations += 1
    if not np.isfinite(f):
        raise DivergenceError("energy is NaN at the initial point", trace)
    trace.record(f, np.abs(g).max(), 0.0)
    gmax = np.abs(g).max()
    alpha = 0.1 * problem.tau / gmax if gmax > 0 else 1.0

    for it in range(problem.max_iters):
        if callback is not None:
            callback(it, v, f, spec)
        if snapshot_every and it % snapshot_every == 0:
            trace.snapshots.append((it, spec.eigenvectors.copy()))
        # projected-gradient stationarity measure
        pg = v - np.maximum(v - g, 0.0)
        if np.abs(pg).max() < problem.tol_grad:
            trace.converged, trace.reason = True, "gradient"
            break
        if problem.max_seconds is not None and time.perf_counter() - t0 > problem.max_seconds:
            trace.reason = "budget"
            break
        for _ in range(max_halvings):
            v_new = np.maximum(v - alpha * g, 0.0)
            f_new, g_new, spec_new = problem.evaluate(v_new)
            trace.evaluations += 1
            if np.isfinite(f_new) and f_new < f:
                break
            alpha *= 0.5
        else:
            trace.reason = "line_search"
            break
        v, f, g, spec = v_new, f_new, g_new, spec_new
        trace.record(f, np.abs(pg).max(), alpha)
        E = trace.energies
        if len(E) > 5 and (E[-6] - E[-1]) <= problem.tol_energy * E[-6]:
            trace.converged, trace.reason = True, "energy"
            break
    else:
        trace.reason = "max_iters"
    trace.final = v
    trace.wall_time = time.perf_counter() - t0
    return PotentialField(v, problem.tau), trace


def extract_region(
    mesh: TriangleMesh,
    ops: OperatorPair,
    potential,
    spec: Spectrum,
    level: float,
    k: int | None = None,
    min_share: float = 0.5,
) -> RegionMask:
    """Threshold an optimized potential into a vertex region.

    The core is ``{v < level}``. Core components that hold at least
    ``min_share`` of the mass ``a psi_i^2`` of one of the first ``k``
    eigenfunctions are kept, which drops pockets none of them lives in. The result is closed by
    one vertex ring, since the zero-potential set of a Dirichlet submesh is
    its interior and the boundary ring sits just outside it.
    """
    v = np.asarray(getattr(potential, "values", potential), dtype=float)
    core = RegionMask(mesh, v < level)
    mass = ops.a[:, None] * spec.eigenvectors[:, :k] ** 2
    keep = np.zeros(mesh.n_vertices, dtype=bool)
    for comp in connected_components(core):
        if mass[comp.indicator].sum(axis=0).max() >= min_share:
            keep |= comp.indicator
    ring = mesh.adjacency @ keep.astype(float) > 0
    return RegionMask(mesh, keep | ring)

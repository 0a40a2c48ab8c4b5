"""Self-checks run by ``eigalign validate``.

Each check returns ``(passed, detail)``; :func:`run_checks` collects them in
order and never raises for a failing check.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from .align import AlignmentProblem
from .mesh import RegionMask, extract_submesh, load_mesh
from .operators import assemble_laplacian, build_grid_domain, saturation, step_potential
from .spectrum import dirichlet_spectrum, solve_generalized
from .synthetic import icosphere, perturbed_grid

logger = logging.getLogger(__name__)


def square_modes(count: int, side: float = 1.0) -> np.ndarray:
    """Smallest Dirichlet eigenvalues ``pi^2 (p^2 + q^2) / side^2`` of a square."""
    r = int(np.ceil(np.sqrt(count))) + 2
    p, q = np.meshgrid(np.arange(1, r + 1), np.arange(1, r + 1))
    return np.sort((np.pi / side) ** 2 * (p**2 + q**2).ravel())[:count]


def check_square_spectrum(sizes=(16, 32)):
    exact = square_modes(5)
    errs = []
    for n in sizes:
        lam = dirichlet_spectrum(build_grid_domain(n), 5).eigenvalues
        errs.append(float(np.max(np.abs(lam - exact) / exact)))
    ok = errs[-1] <= 0.05 and all(b < a for a, b in zip(errs, errs[1:]))
    return ok, f"max relative error per grid size {dict(zip(sizes, np.round(errs, 5)))}"


def _cap_setup(subdivisions):
    mesh = icosphere(subdivisions)
    cap = RegionMask(mesh, mesh.vertices[:, 2] > 0.2)
    sub, vmap = extract_submesh(mesh, cap)
    return mesh, sub, vmap


def check_step_potential(subdivisions=3, factors=(10.0, 100.0, 1000.0), k=10):
    """Step-potential eigenvalues approach the cut-out Dirichlet spectrum."""
    mesh, sub, vmap = _cap_setup(subdivisions)
    ops = assemble_laplacian(mesh)
    sops = assemble_laplacian(sub)
    mu = dirichlet_spectrum(sub, k, ops=sops).eigenvalues
    zero = np.zeros(mesh.n_vertices, dtype=bool)
    zero[vmap[sops.interior_index]] = True
    errs = []
    for f in factors:
        lam = solve_generalized(ops, step_potential(zero, f * mu[-1]), k).eigenvalues
        errs.append(float(np.max(np.abs(lam - mu) / mu)))
    ok = all(b < a for a, b in zip(errs, errs[1:])) and errs[-1] < 0.01
    return ok, "max relative error per tau/mu_k " + ", ".join(
        f"{f:g}: {e:.2e}" for f, e in zip(factors, errs)
    )


def check_confinement(subdivisions=3, factor=1000.0, k=10, bound=1e-3):
    mesh, sub, vmap = _cap_setup(subdivisions)
    ops = assemble_laplacian(mesh)
    mu = dirichlet_spectrum(sub, k).eigenvalues
    zero = np.zeros(mesh.n_vertices, dtype=bool)
    zero[vmap[assemble_laplacian(sub).interior_index]] = True
    spec = solve_generalized(ops, step_potential(zero, factor * mu[-1]), k)
    outside = (ops.a[~zero, None] * spec.eigenvectors[~zero] ** 2).sum(axis=0)
    return bool(outside.max() <= bound), f"max exterior mass {outside.max():.2e}"


def check_gradient(seed=0, k=10, h=1e-5, bound=1e-5):
    """Central differences against the analytic gradient on a small patch."""
    mesh = perturbed_grid(15, 10, seed=seed)
    ops = assemble_laplacian(mesh)
    rng = np.random.default_rng(seed)
    mu = np.sort(dirichlet_spectrum(mesh, k).eigenvalues * rng.uniform(0.8, 1.2, k))
    prob = AlignmentProblem(ops, mu, backend="dense")
    u = rng.normal(0.0, 1.0, mesh.n_vertices)
    _, g, spec = prob.evaluate(u)
    idx = rng.choice(ops.interior_index, size=20, replace=False)
    worst = 0.0
    for j in idx:
        e = np.zeros(mesh.n_vertices)
        e[j] = h
        fd = (prob.energy(saturation(u + e, prob.tau)) - prob.energy(saturation(u - e, prob.tau))) / (2 * h)
        worst = max(worst, abs(fd - g[j]) / max(abs(g[j]), 1e-3 * np.abs(g).max()))
    return worst <= bound, f"max relative difference {worst:.2e} over {len(idx)} coordinates"


def check_invariance(seed=0, k=10):
    mesh = perturbed_grid(12, 11, seed=seed)
    lam = dirichlet_spectrum(mesh, k).eigenvalues
    rng = np.random.default_rng(seed)
    perm = rng.permutation(mesh.n_vertices)
    lam_p = dirichlet_spectrum(mesh.permuted(perm), k).eigenvalues
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    lam_r = dirichlet_spectrum(mesh.transformed(q, rng.standard_normal(3)), k).eigenvalues
    ep = float(np.max(np.abs(lam_p - lam) / lam))
    er = float(np.max(np.abs(lam_r - lam) / lam))
    return ep <= 1e-12 and er <= 1e-10, f"permutation {ep:.1e}, rigid motion {er:.1e}"


def relative_disagreement(reference, other) -> float:
    """Largest ``|a - b| / |a|`` over two eigenvalue lists.

    A (numerically) zero eigenvalue of a closed surface has no meaningful
    relative error, so magnitudes are floored at ``1e-3`` of the largest.
    """
    a, b = np.asarray(reference, dtype=float), np.asarray(other, dtype=float)
    scale = np.maximum(np.abs(a), 1e-3 * np.abs(a).max())
    return float(np.max(np.abs(a - b) / scale))


def check_backends(k=8, meshes=None):
    worst = 0.0
    if meshes is None:
        meshes = (build_grid_domain(12), perturbed_grid(15, 10), icosphere(2))
    for mesh in meshes:
        ops = assemble_laplacian(mesh)
        d = solve_generalized(ops, None, k, backend="dense").eigenvalues
        it = solve_generalized(ops, None, k, backend="iterative").eigenvalues
        worst = max(worst, relative_disagreement(d, it))
    return worst <= 1e-8, f"max relative disagreement {worst:.1e}"


def check_mesh_file(path):
    """Load a user mesh and make sure its operators and spectrum are sane."""
    mesh = load_mesh(path)
    ops = assemble_laplacian(mesh)
    if not np.isfinite(ops.W.data).all():
        return False, "stiffness matrix has non-finite entries"
    k = min(5, ops.n_interior)
    if k < 1:
        return False, "mesh has no interior vertices"
    lam = solve_generalized(ops, None, k).eigenvalues
    if (lam < -1e-8 * max(abs(lam).max(), 1.0)).any():
        return False, f"negative eigenvalue {lam.min():.3e}"
    return True, f"{mesh!r}, first eigenvalues {np.round(lam, 6).tolist()}"


FAST = [
    ("square_spectrum", check_square_spectrum),
    ("step_potential", check_step_potential),
    ("confinement", check_confinement),
    ("gradient", check_gradient),
    ("invariance", check_invariance),
    ("backend_agreement", check_backends),
]

FULL = FAST + [
    ("square_spectrum_refinement", lambda: check_square_spectrum((16, 32, 64))),
    ("step_potential_escalation", lambda: check_step_potential(4, (10.0, 100.0, 1000.0, 1e4))),
    ("confinement_fine", lambda: check_confinement(4)),
]


def run_checks(level: str = "fast", mesh_path=None):
    """Run the named suite; returns a list of ``{name, passed, detail, seconds}``."""
    if level not in ("fast", "full"):
        raise ValueError(f"unknown level {level!r}")
    checks = list(FAST if level == "fast" else FULL)
    if mesh_path is not None:
        checks.insert(0, ("mesh_file", lambda: check_mesh_file(mesh_path)))
    report = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        dt = time.perf_counter() - t0
        logger.info("%s %s (%.1fs) %s", "PASS" if ok else "FAIL", name, dt, detail)
        report.append({"name": name, "passed": bool(ok), "detail": detail, "seconds": round(dt, 3)})
    return report

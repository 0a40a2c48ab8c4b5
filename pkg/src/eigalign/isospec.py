"""Shape from spectrum on a planar grid: recover a region from its Dirichlet
eigenvalues by aligning a potential on the square."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .align import AlignmentProblem, OptimizationTrace, extract_region, optimize
from .mesh import RegionMask, TriangleMesh
from .operators import PotentialField, assemble_laplacian, build_grid_domain
from .spectrum import Spectrum


@dataclass
class IsospecConfig:
    """Settings for :func:`shape_from_spectrum`.

    The start is the constant potential ``init_fraction * tau``. The region
    is read off at ``region_cut * mu_k``.
    """

    n: int = 30
    k: int = 50
    side_length: float = 1.0
    tau_factor: float = 10.0
    init_fraction: float = 0.25
    region_cut: float = 1.0
    max_iters: int = 3000
    max_seconds: float | None = 300.0
    tol_energy: float = 1e-8
    backend: str = "auto"
    warm_start: bool = False
    snapshot_every: int = 0

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs n >= 3")
        if self.k < 1:
            raise ValueError("k must be positive")
        if not 0.0 < self.init_fraction < 1.0:
            raise ValueError("init_fraction must lie in (0, 1)")
        if self.side_length <= 0:
            raise ValueError("side_length must be positive")


FAST = IsospecConfig(k=5, max_seconds=60.0, max_iters=1000)


@dataclass
class IsospecResult:
    mesh: TriangleMesh
    potential: PotentialField
    region: RegionMask
    trace: OptimizationTrace
    image: np.ndarray
    eigenvalues: np.ndarray
    energy: float
    over_budget: bool

    def region_grid(self) -> np.ndarray:
        """Region as an ``n x n`` 0/1 array, top row = largest y."""
        n = self.image.shape[0]
        return self.region.indicator.reshape(n, n)[::-1].astype(np.uint8)


def constant_initialization(n_vertices: int, fraction: float = 0.25) -> np.ndarray:
    """Parameter ``u`` for the constant potential ``fraction * tau``."""
    return np.full(n_vertices, np.arctanh(2.0 * fraction - 1.0))


def shape_from_spectrum(mu, cfg: IsospecConfig | None = None, callback=None) -> IsospecResult:
    """Recover a planar region whose Dirichlet spectrum starts with ``mu``.

    ``mu`` must be expressed for a square of side ``cfg.side_length``. The
    optimizer is stopped after ``cfg.max_seconds``; the last accepted iterate
    is returned with ``over_budget`` set.
    """
    cfg = cfg or IsospecConfig()
    if isinstance(mu, Spectrum):
        mu = mu.eigenvalues
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.size < cfg.k:
        raise ValueError(f"target has {mu.size} eigenvalues, need k = {cfg.k}")
    mu = mu[: cfg.k]

    mesh = build_grid_domain(cfg.n, cfg.side_length)
    ops = assemble_laplacian(mesh)
    problem = AlignmentProblem(
        ops,
        mu,
        tau=cfg.tau_factor * mu[-1],
        max_iters=cfg.max_iters,
        tol_energy=cfg.tol_energy,
        backend=cfg.backend,
        warm_start=cfg.warm_start,
        max_seconds=cfg.max_seconds,
    )
    u0 = constant_initialization(mesh.n_vertices, cfg.init_fraction)
    pot, trace = optimize(problem, u0, callback=callback, snapshot_every=cfg.snapshot_every)
    spec = problem.spectrum(pot.values)
    region = extract_region(mesh, ops, pot, spec, cfg.region_cut * mu[-1], k=cfg.k)
    lam = spec.eigenvalues[: cfg.k]
    return IsospecResult(
        mesh=mesh,
        potential=pot,
        region=region,
        trace=trace,
        image=rasterize_potential(pot, cfg.n),
        eigenvalues=lam,
        energy=float(np.sum(((lam - mu) / mu) ** 2)),
        over_budget=trace.reason == "budget",
    )


# ---------------------------------------------------------------------------
# output


def rasterize_potential(potential: PotentialField, n: int, path=None) -> np.ndarray:
    """8-bit ``n x n`` image with pixel ``round(255 (1 - v / tau))``.

    Row 0 of the image is the top of the square (largest y). When ``path`` is
    given the image is also written as binary PGM.
    """
    v = np.asarray(potential.values, dtype=float)
    if v.size != n * n:
        raise ValueError(f"potential has {v.size} values, expected {n * n}")
    frac = np.clip(1.0 - v / potential.tau, 0.0, 1.0)
    img = np.rint(255.0 * frac).astype(np.uint8).reshape(n, n)[::-1]
    if path is not None:
        write_pgm(img, path)
    return img


def write_pgm(img: np.ndarray, path):
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).copy()


def write_region_grid(grid: np.ndarray, path):
    with open(path, "w") as fh:
        for row in grid:
            fh.write(" ".join(str(int(x)) for x in row) + "\n")


def region_topology(grid: np.ndarray):
    """``(components, holes)`` of a 0/1 grid, 8-connected for the region.

    A hole is a component of the complement (4-connected) that does not touch
    the border of the grid.
    """
    grid = np.asarray(grid, dtype=bool)
    _, n_comp = ndimage.label(grid, structure=np.ones((3, 3)))
    lab, n_bg = ndimage.label(~grid)
    border = set(np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]])))
    holes = sum(1 for i in range(1, n_bg + 1) if i not in border)
    return n_comp, holes


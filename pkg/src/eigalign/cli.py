"""Command-line interface: ``eigalign {eigs,localize,isospec,validate}``.

Results are written to files; stdout carries only the list of written paths,
one per line. Diagnostics go to stderr. Exit status is 0 on success, 2 for
bad input and 3 when a solver fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .align import DivergenceError
from .isospec import FAST, IsospecConfig, region_topology, shape_from_spectrum, write_pgm, write_region_grid
from .localize import LocalizationConfig, label_pieces, localize
from .mesh import MeshError, connected_components, load_mask, load_mesh
from .operators import assemble_laplacian
from .spectrum import ConvergenceError, dirichlet_spectrum, read_spectrum, solve_generalized, write_spectrum
from .validation import run_checks

logger = logging.getLogger("eigalign")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float) or default is None:
        return None if value.lower() == "none" else float(value)
    if isinstance(default, tuple):
        return tuple(float(x) for x in value.split(","))
    return value


def build_config(cls, base, settings: dict):
    """Instantiate ``cls`` from ``base`` with string ``settings`` applied."""
    fields = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for key, value in settings.items():
        if key not in fields:
            raise InputError(f"unknown setting {key!r}; known: {', '.join(sorted(fields))}")
        try:
            updates[key] = _coerce(value, getattr(base, key))
        except ValueError as exc:
            raise InputError(f"setting {key}: {exc}") from None
    try:
        return dataclasses.replace(base, **updates)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _settings(args) -> dict:
    settings = read_config(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        settings[key.strip()] = value.strip()
    for key in ("k", "seed", "workers", "backend"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = str(value)
    return settings


def _read_potential(path, n) -> np.ndarray:
    """One value per line, or the ``vertex,v`` CSV written by this tool."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("vertex"):
                continue
            try:
                values.append(float(line.split(",")[-1]))
            except ValueError:
                raise InputError(f"{path}:{lineno}: not a number: {line!r}") from None
    if len(values) != n:
        raise InputError(f"{path}: {len(values)} potential values for {n} vertices")
    return np.asarray(values)


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_mask(indicator, path):
    with open(path, "w") as fh:
        fh.writelines(f"{int(b)}\n" for b in indicator)


# ---------------------------------------------------------------------------
# commands


def cmd_eigs(args):
    mesh = load_mesh(args.mesh)
    if args.unit_area:
        mesh = mesh.transformed(scale=1.0 / np.sqrt(mesh.total_area()))
    ops = assemble_laplacian(mesh)
    v = _read_potential(args.potential, mesh.n_vertices) if args.potential else None
    spec = solve_generalized(ops, v, args.k, backend=args.backend or "auto")
    write_spectrum(spec, args.out, include_vectors=args.vectors)
    return [args.out]


def cmd_localize(args):
    cfg = build_config(LocalizationConfig, LocalizationConfig(), _settings(args))
    meshX = load_mesh(args.mesh)
    meshY = load_mesh(args.partial) if args.partial else None
    mu = read_spectrum(args.spectrum) if args.spectrum else None
    if meshY is None and mu is None:
        raise InputError("localize needs --partial or --spectrum")
    truth = load_mask(meshX, args.truth) if args.truth else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    opsX = assemble_laplacian(meshX)
    res = localize(meshX, mu, meshY, cfg, truth=truth, opsX=opsX)
    best = res.best
    summary = {
        "selection": res.selection,
        "flags": res.flags,
        "best_init_id": best.init_id,
        "ranking": res.ranking,
        "candidates": [c.summary() for c in res.candidates],
        "best_eigenvalues": [float(x) for x in best.eigenvalues],
    }
    if best.iou is not None:
        summary["best_iou"] = best.iou
    paths = []

    pieces = connected_components(best.region)
    summary["components"] = len(pieces)
    if meshY is not None and pieces:
        specX = solve_generalized(opsX, best.potential.values, cfg.k, backend=cfg.backend)
        specY = dirichlet_spectrum(meshY, cfg.k, backend=cfg.backend)
        labels = label_pieces(best.region, specX, opsX, meshY, specY)
        summary["labels"] = {str(k): v for k, v in labels.assignment.items()}
        summary["labels_consistent"] = labels.consistent
        per_vertex = np.full(meshX.n_vertices, -1)
        for cx, piece in enumerate(pieces):
            per_vertex[piece.indicator] = labels.assignment.get(cx, -1)
        p = out / "labels.txt"
        with open(p, "w") as fh:
            fh.writelines(f"{int(x)}\n" for x in per_vertex)
        paths.append(p)

    _write_mask(best.region.indicator, out / "region.txt")
    best.potential.to_csv(out / "potential.csv")
    best.trace.to_csv(out / "trace.csv")
    _dump_json(summary, out / "result.json")
    return [out / "result.json", out / "region.txt", out / "potential.csv", out / "trace.csv"] + paths


def cmd_isospec(args):
    base = FAST if args.preset == "fast" else IsospecConfig()
    cfg = build_config(IsospecConfig, base, _settings(args))
    mu = read_spectrum(args.spectrum)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = shape_from_spectrum(mu, cfg)
    grid = res.region_grid()
    comps, holes = region_topology(grid)
    summary = {
        "energy": res.energy,
        "eigenvalues": [float(x) for x in res.eigenvalues],
        "iterations": res.trace.iterations,
        "stop_reason": res.trace.reason,
        "over_budget": res.over_budget,
        "region_components": comps,
        "region_holes": holes,
        "tau": res.potential.tau,
    }
    write_pgm(res.image, out / "potential.pgm")
    write_region_grid(grid, out / "region.txt")
    res.trace.to_csv(out / "trace.csv")
    res.potential.to_csv(out / "potential.csv")
    _dump_json(summary, out / "result.json")
    paths = [out / "result.json", out / "potential.pgm", out / "region.txt", out / "trace.csv", out / "potential.csv"]
    if cfg.snapshot_every:
        snaps = out / "snapshots.npz"
        np.savez_compressed(
            snaps,
            iterations=np.array([it for it, _ in res.trace.snapshots]),
            eigenvectors=np.array([vec for _, vec in res.trace.snapshots]),
        )
        paths.append(snaps)
    return paths


def cmd_validate(args):
    report = run_checks(args.level, args.mesh)
    failed = [r["name"] for r in report if not r["passed"]]
    paths = []
    if args.out:
        _dump_json({"level": args.level, "checks": report, "failed": failed}, args.out)
        paths.append(args.out)
    for name in failed:
        logger.error("check failed: %s", name)
    if failed:
        raise CheckFailure(paths, failed)
    return paths


class CheckFailure(Exception):
    def __init__(self, paths, failed):
        super().__init__(", ".join(failed))
        self.paths = paths


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eigalign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eigs", help="smallest Dirichlet/Hamiltonian eigenvalues of a mesh")
    e.add_argument("--mesh", required=True)
    e.add_argument("-k", type=int, default=20)
    e.add_argument("--potential", help="per-vertex potential, one value per line")
    e.add_argument("--backend", choices=["auto", "dense", "iterative"])
    e.add_argument("--vectors", action="store_true", help="also store eigenvectors")
    e.add_argument("--unit-area", action="store_true", help="rescale the mesh to total area 1 first")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eigs)

    def common(sp):
        sp.add_argument("--config", help="key=value settings file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        sp.add_argument("-k", type=int)
        sp.add_argument("--backend", choices=["auto", "dense", "iterative"])
        sp.add_argument("--out", required=True, help="output directory")

    lo = sub.add_parser("localize", help="find the region of a mesh matching a partial shape")
    lo.add_argument("--mesh", required=True, help="full shape")
    lo.add_argument("--partial", help="partial shape mesh (enables descriptor selection)")
    lo.add_argument("--spectrum", help="target spectrum JSON")
    lo.add_argument("--truth", help="ground-truth 0/1 mask for IoU reporting")
    lo.add_argument("--seed", type=int)
    lo.add_argument("--workers", type=int)
    common(lo)
    lo.set_defaults(func=cmd_localize)

    iso = sub.add_parser("isospec", help="recover a planar region from its eigenvalues")
    iso.add_argument("--spectrum", required=True)
    iso.add_argument("--preset", choices=["default", "fast"], default="default")
    common(iso)
    iso.set_defaults(func=cmd_isospec)

    va = sub.add_parser("validate", help="run the numerical self-checks")
    va.add_argument("--level", choices=["fast", "full"], default="fast")
    va.add_argument("--mesh", help="also check this mesh file")
    va.add_argument("--out", help="write the report as JSON")
    va.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        paths = args.func(args)
    except CheckFailure as exc:
        for p in exc.paths:
            print(p)
        return EXIT_INPUT if "mesh_file" in str(exc) else 1
    except (ConvergenceError, DivergenceError, np.linalg.LinAlgError) as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except (InputError, MeshError, ValueError, OSError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

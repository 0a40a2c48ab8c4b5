import numpy as np
import pytest

from eigalign.mesh import RegionMask, TriangleMesh, extract_submesh
from eigalign.operators import assemble_laplacian, build_grid_domain, step_potential
from eigalign.localize import (
    LocalizationConfig,
    angle_defect,
    descriptor_field,
    gaussian_initialization,
    iou,
    label_pieces,
    localize,
    make_initializations,
    selection_coefficients,
)
from eigalign.spectrum import dirichlet_spectrum, solve_generalized
from eigalign.synthetic import (
    ball_with_area,
    bumpy_blob,
    disc,
    disjoint_union,
    grid_mask,
    icosphere,
)


def cube():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    f = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return TriangleMesh(v, f)


def test_angle_defect_examples(sphere3):
    g = build_grid_domain(6)
    assert np.abs(angle_defect(g)[~g.boundary_vertex]).max() < 1e-12
    assert angle_defect(sphere3).sum() == pytest.approx(4 * np.pi, abs=1e-9)
    assert (angle_defect(sphere3) > 0).all()
    np.testing.assert_allclose(angle_defect(cube()), np.pi / 2, atol=1e-12)


def test_angle_defect_boundary_gauss_bonnet():
    # flat disc-topology patch: interior defects vanish, boundary turning sums to 2 pi
    g = build_grid_domain(7)
    assert angle_defect(g).sum() == pytest.approx(2 * np.pi, abs=1e-9)


def test_descriptor_is_pointwise_curvature(sphere3):
    F = descriptor_field(sphere3)
    assert np.median(F) == pytest.approx(1.0, rel=0.05)


def test_initializations():
    # radius 5: the antipode sits many widths away from each centre
    mesh = icosphere(2, radius=5.0)
    cfg = LocalizationConfig(m=20)
    inits = make_initializations(mesh, cfg, tau=100.0)
    assert len(inits) == 40
    centre, s2, u = inits[0]
    assert u[centre] == pytest.approx(np.arctanh(2e-3 - 1))
    far = np.argmax(np.linalg.norm(mesh.vertices - mesh.vertices[centre], axis=1))
    assert u[far] > 1.0
    assert s2 == pytest.approx(np.sqrt(mesh.total_area()))
    assert inits[1][1] == pytest.approx(2 * np.sqrt(mesh.total_area()))


def test_selection_coefficients_trivial(patch150):
    ops = assemble_laplacian(patch150)
    spec = dirichlet_spectrum(patch150, 6, ops=ops)
    np.testing.assert_allclose(selection_coefficients(spec, ops, 1.0), 1.0, rtol=1e-10)
    np.testing.assert_array_equal(selection_coefficients(spec, ops, np.zeros(ops.n)), 0.0)
    with pytest.raises(ValueError):
        selection_coefficients(spec.truncated(3), ops, 1.0)


def test_selection_coefficients_match_submesh():
    mesh = bumpy_blob(1500)
    region = ball_with_area(mesh, 10, 0.3)
    sub, vmap = extract_submesh(mesh, region)
    sops = assemble_laplacian(sub)
    sspec = dirichlet_spectrum(sub, 5, ops=sops)
    F = descriptor_field(mesh)
    d = selection_coefficients(sspec, sops, F[vmap])
    zero = np.zeros(mesh.n_vertices, bool)
    zero[vmap[sops.interior_index]] = True
    ops = assemble_laplacian(mesh)
    spec = solve_generalized(ops, step_potential(zero, 1e4 * sspec.eigenvalues[-1]), 5)
    c = selection_coefficients(spec, ops, F)
    np.testing.assert_allclose(c, d, atol=1e-2 * np.abs(F).max())


def test_iou_examples(grid12):
    n = grid12.n_vertices
    a = RegionMask(grid12, grid12.vertices[:, 0] < 0.5)
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    empty = RegionMask(grid12, np.zeros(n, bool))
    assert iou(empty, empty) == 1.0
    # equal-area masks overlapping in half their area: a / 3a
    ind = np.zeros(n, bool)
    ind[:40] = True
    other = np.zeros(n, bool)
    other[20:60] = True
    flat = TriangleMesh(grid12.vertices, grid12.faces)
    x, y = RegionMask(flat, ind), RegionMask(flat, other)
    w = flat.vertex_areas
    expected = w[20:40].sum() / w[:60].sum()
    assert iou(x, y) == pytest.approx(expected)


def test_iou_third():
    # four unit squares side by side; masks {0,1} and {1,2} share one of three
    xs = np.arange(5.0)
    v = np.concatenate([np.column_stack([xs, np.zeros(5)]), np.column_stack([xs, np.ones(5)])])
    f = [t for i in range(4) for t in ((i, i + 1, i + 6), (i, i + 6, i + 5))]
    mesh = TriangleMesh(v, f)
    col = np.tile(np.arange(5), 2)
    a = RegionMask(mesh, (col >= 1) & (col <= 2))
    b = RegionMask(mesh, (col >= 2) & (col <= 3))
    assert iou(a, b) == pytest.approx(1 / 3)


@pytest.fixture(scope="module")
def planted_blob():
    mesh = bumpy_blob(1200)
    truth = ball_with_area(mesh, 0, 0.3)
    sub, vmap = extract_submesh(mesh, truth)
    return mesh, truth, sub


def test_seeded_init_recovers_region(planted_blob):
    mesh, truth, sub = planted_blob
    cfg = LocalizationConfig(k=10, max_iters=60)
    mu = dirichlet_spectrum(sub, 10).eigenvalues
    tau = cfg.tau_factor * mu[-1]
    s2 = np.sqrt(mesh.total_area())
    inits = [(0, s2, gaussian_initialization(mesh, 0, s2, tau))]
    res = localize(mesh, mu, None, cfg, truth=truth, inits=inits)
    assert res.best.iou >= 0.9
    assert res.selection == "energy" and "energy_fallback" in res.flags


def test_descriptor_selection_and_permutation(planted_blob):
    mesh, truth, sub = planted_blob
    cfg = LocalizationConfig(k=10, max_iters=25)
    tau_probe = 10 * dirichlet_spectrum(sub, 10).eigenvalues[-1]
    s2 = np.sqrt(mesh.total_area())
    far = int(np.argmin(mesh.vertices @ mesh.vertices[0]))
    inits = [(c, s2, gaussian_initialization(mesh, c, s2, tau_probe)) for c in (0, far)]
    res = localize(mesh, None, sub, cfg, truth=truth, inits=inits)
    assert res.selection == "descriptor" and "energy_fallback" not in res.flags
    assert all(c.selection_distance is not None for c in res.candidates)
    assert res.ranking[0] == int(np.argmax([c.iou for c in res.candidates]))

    perm = np.random.default_rng(0).permutation(mesh.n_vertices)
    pmesh = mesh.permuted(perm)
    pinits = [(int(np.flatnonzero(perm == c)[0]), s, u[perm]) for c, s, u in inits]
    pres = localize(pmesh, None, sub, cfg, inits=pinits)
    for a, b in zip(res.candidates, pres.candidates):
        np.testing.assert_allclose(b.eigenvalues, a.eigenvalues, rtol=1e-6)
        np.testing.assert_array_equal(b.region.indicator, a.region.indicator[perm])


def test_parallel_matches_serial(planted_blob):
    mesh, truth, sub = planted_blob
    mu = dirichlet_spectrum(sub, 6).eigenvalues
    cfg = LocalizationConfig(k=6, m=2, widths=(1.0,), max_iters=5, workers=1)
    a = localize(mesh, mu, None, cfg)
    b = localize(mesh, mu, None, LocalizationConfig(k=6, m=2, widths=(1.0,), max_iters=5, workers=2))
    assert [c.energy for c in a.candidates] == [c.energy for c in b.candidates]
    assert a.ranking == b.ranking


def test_localize_needs_target(grid12):
    with pytest.raises(ValueError):
        localize(grid12, None, None)
    with pytest.raises(ValueError):
        LocalizationConfig(widths=(0.0,))


def _two_discs(n=30, centres=((0.3, 0.3, 0.17), (0.72, 0.68, 0.12))):
    grid = build_grid_domain(n)
    masks = [RegionMask(grid, grid_mask(n, disc(*c))) for c in centres]
    pieces = [extract_submesh(grid, m) for m in masks]
    return grid, masks, pieces


def test_label_pieces_two_discs():
    grid, masks, pieces = _two_discs()
    Y = disjoint_union(*(p[0] for p in pieces))
    # the X-side region is the planted union; eigenpairs from its step potential
    union = masks[0] | masks[1]
    ops = assemble_laplacian(grid)
    zero = np.zeros(grid.n_vertices, bool)
    for sub, vmap in pieces:
        zero[vmap[assemble_laplacian(sub).interior_index]] = True
    specY = dirichlet_spectrum(Y, 8)
    specX = solve_generalized(ops, step_potential(zero, 1e3 * specY.eigenvalues[-1]), 8)
    lab = label_pieces(union, specX, ops, Y, specY)
    assert lab.consistent
    # component 0 is the larger disc on both sides
    assert lab.assignment == {0: 0, 1: 1}
    assert lab.votes.sum() == 8


def test_label_pieces_single_and_mismatch():
    grid, masks, pieces = _two_discs()
    sub, _ = pieces[0]
    ops = assemble_laplacian(grid)
    spec = solve_generalized(ops, step_potential(masks[0].indicator, 1e4), 4)
    lab = label_pieces(masks[0], spec, ops, sub, dirichlet_spectrum(sub, 4))
    assert lab.assignment == {0: 0} and lab.consistent
    Y = disjoint_union(*(p[0] for p in pieces))
    lab = label_pieces(masks[0], spec, ops, Y, dirichlet_spectrum(Y, 4))
    assert not lab.consistent

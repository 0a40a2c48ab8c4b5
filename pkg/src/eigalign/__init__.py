"""Locate and reconstruct shapes from Laplacian eigenvalues by optimizing a
potential on a reference surface."""

from .align import (
    AlignmentProblem,
    DivergenceError,
    OptimizationTrace,
    alignment_energy,
    extract_region,
    optimize,
)
from .isospec import IsospecConfig, rasterize_potential, shape_from_spectrum
from .localize import LocalizationConfig, descriptor_field, iou, label_pieces, localize, selection_coefficients
from .mesh import (
    MeshError,
    RegionMask,
    TriangleMesh,
    connected_components,
    extract_submesh,
    farthest_point_sampling,
    load_mask,
    load_mesh,
    save_mask,
    save_mesh,
)
from .operators import (
    OperatorPair,
    PotentialField,
    assemble_hamiltonian,
    assemble_laplacian,
    build_grid_domain,
    saturation,
)
from .spectrum import ConvergenceError, Spectrum, dirichlet_spectrum, eigenvalue_gradient, solve_generalized

__version__ = "0.1.0"

"""Simulation and reconstruction of complex shear-modulus maps on 3D voxel grids.

The package has two halves.  The forward half rasterizes phantoms, assembles a
mixed displacement/pressure finite-element wave model and solves it to produce
synthetic multifrequency displacement data.  The inverse half reconstructs the
complex shear modulus from such data, either by a single global linearized
solve ("direct" mode) or by an overlapping-subzone consensus ADMM with
total-variation and k-space sparsity priors ("ersa" / "mersa" modes).
"""

from .grid import (
    VoxelGrid,
    ComplexScalarField,
    DisplacementField,
    MultiFrequencyDataset,
    RegionMask,
)
from .phantom import PhantomSpec, SphereInclusion, CylinderInclusion, rasterize_phantom
from .fields import add_gaussian_noise, plane_fit_gradient
from .fem import DofMap
from .forward import BoundaryConditions, solve_forward, generate_dataset, max_eig
from .subzones import SubzonePartition, partition_subzones
from .admm import AdmmParams, AdmmState, compute_params, run_reconstruction
from .metrics import rmse, cnr, icc, line_profile, young_from_shear

__version__ = "0.1.0"

__all__ = [
    "VoxelGrid",
    "ComplexScalarField",
    "DisplacementField",
    "MultiFrequencyDataset",
    "RegionMask",
    "PhantomSpec",
    "SphereInclusion",
    "CylinderInclusion",
    "rasterize_phantom",
    "add_gaussian_noise",
    "plane_fit_gradient",
    "DofMap",
    "BoundaryConditions",
    "solve_forward",
    "generate_dataset",
    "max_eig",
    "SubzonePartition",
    "partition_subzones",
    "AdmmParams",
    "AdmmState",
    "compute_params",
    "run_reconstruction",
    "rmse",
    "cnr",
    "icc",
    "line_profile",
    "young_from_shear",
]

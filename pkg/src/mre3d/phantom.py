"""Geometric phantom definitions and their rasterization onto voxel grids.

Membership tests use voxel centers only; there is no partial-volume weighting,
matching the piecewise-constant modulus representation used by the solver.
When inclusions overlap, the last-listed one wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ComplexScalarField, VoxelGrid


@dataclass(frozen=True)
class SphereInclusion:
    center: tuple[float, float, float]
    radius: float
    mu: complex

    def contains(self, points: np.ndarray) -> np.ndarray:
        d2 = np.sum((points - np.asarray(self.center)) ** 2, axis=1)
        return d2 <= self.radius**2


@dataclass(frozen=True)
class CylinderInclusion:
    """Infinite circular cylinder given by a point on its axis and a direction."""

    point: tuple[float, float, float]
    axis: tuple[float, float, float]
    radius: float
    mu: complex

    def contains(self, points: np.ndarray) -> np.ndarray:
        a = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(a)
        if norm == 0:
            raise ValueError("cylinder axis direction must be nonzero")
        a = a / norm
        rel = points - np.asarray(self.point)
        along = rel @ a
        perp2 = np.sum(rel**2, axis=1) - along**2
        return perp2 <= self.radius**2


@dataclass
class PhantomSpec:
    """Material layout: background modulus plus a list of inclusions."""

    background_mu: complex
    density: float
    poisson_ratio: float
    inclusions: list = field(default_factory=list)

    def __post_init__(self):
        self.background_mu = complex(self.background_mu)
        if self.background_mu.real <= 0 or self.background_mu.imag < 0:
            raise ValueError("background modulus needs Re > 0 and Im >= 0")
        for inc in self.inclusions:
            mu = complex(inc.mu)
            if mu.real <= 0 or mu.imag < 0:
                raise ValueError(f"inclusion modulus {mu} needs Re > 0 and Im >= 0")
            if inc.radius <= 0:
                raise ValueError("inclusion radii must be positive")
        if not (0 < self.poisson_ratio < 0.5):
            raise ValueError(f"poisson_ratio must lie in (0, 0.5), got {self.poisson_ratio}")
        if self.density <= 0:
            raise ValueError("density must be positive")


def rasterize_phantom(spec: PhantomSpec, grid: VoxelGrid) -> ComplexScalarField:
    """Assign each voxel center the modulus of the last-listed inclusion containing it.

    Voxels outside every inclusion get the background modulus.  Geometry that
    misses all voxel centers simply contributes nothing.
    """
    values = np.full(grid.num_voxels, complex(spec.background_mu), dtype=np.complex128)
    if spec.inclusions:
        pts = grid.voxel_centers()
        for inc in spec.inclusions:
            inside = inc.contains(pts)
            values[inside] = complex(inc.mu)
    return ComplexScalarField(grid, values)


def region_mask_values(shape_obj, grid: VoxelGrid) -> np.ndarray:
    """Boolean membership of all voxel centers in a sphere/cylinder shape."""
    return shape_obj.contains(grid.voxel_centers())

"""Voxel grids and the complex-valued fields that live on them.

A field value array is stored flat in x-fastest order: the voxel at integer
coordinates (i, j, k) maps to flat index ``i + nx*(j + ny*k)``.  Voxel (i, j, k)
has its center at physical position ``((i+0.5)*hx, (j+0.5)*hy, (k+0.5)*hz)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VoxelGrid:
    """Regular 3D voxel lattice with physical spacing in meters."""

    nx: int
    ny: int
    nz: int
    hx: float
    hy: float
    hz: float

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or n < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {n!r}")
        for name in ("hx", "hy", "hz"):
            h = getattr(self, name)
            if not np.isfinite(h) or h <= 0:
                raise ValueError(f"{name} must be a positive finite spacing, got {h!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.hx, self.hy, self.hz)

    @property
    def num_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    def voxel_centers(self) -> np.ndarray:
        """All voxel-center coordinates, shape (num_voxels, 3), x-fastest order."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        z = (np.arange(self.nz) + 0.5) * self.hz
        xx, yy, zz = np.meshgrid(x, y, z, indexing="ij")
        return np.stack(
            [xx.reshape(-1, order="F"), yy.reshape(-1, order="F"), zz.reshape(-1, order="F")],
            axis=1,
        )

    def flat_index(self, i, j, k):
        """Flat x-fastest index of voxel (i, j, k); accepts arrays."""
        return np.asarray(i) + self.nx * (np.asarray(j) + self.ny * np.asarray(k))

    def element_grid(self) -> "VoxelGrid":
        """Grid of the cells spanned between adjacent voxel centers.

        Fields that are constant per finite element (pressure, reconstructed
        modulus before node conversion) live on this lattice.
        """
        return VoxelGrid(self.nx - 1, self.ny - 1, self.nz - 1, self.hx, self.hy, self.hz)

    def same_lattice(self, other: "VoxelGrid") -> bool:
        return self.shape == other.shape and np.allclose(self.spacing, other.spacing)


def _as_flat_complex(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128)
    if arr.ndim == 3:
        arr = arr.reshape(-1, order="F")
    if arr.shape != (n,):
        raise ValueError(f"{name} must hold {n} values, got shape {arr.shape}")
    return arr


@dataclass
class ComplexScalarField:
    """One complex value per voxel (Pa for moduli and pressure)."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_flat_complex(self.values, self.grid.num_voxels, "values")

    def as_volume(self) -> np.ndarray:
        """Values as an (nx, ny, nz) array indexed [i, j, k]."""
        return self.values.reshape(self.grid.shape, order="F")

    def copy(self) -> "ComplexScalarField":
        return ComplexScalarField(self.grid, self.values.copy())

    @classmethod
    def constant(cls, grid: VoxelGrid, value: complex) -> "ComplexScalarField":
        return cls(grid, np.full(grid.num_voxels, value, dtype=np.complex128))


@dataclass
class DisplacementField:
    """One complex 3-vector per voxel (meters), tied to a drive frequency in Hz."""

    grid: VoxelGrid
    values: np.ndarray
    frequency: float

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.complex128)
        n = self.grid.num_voxels
        if arr.ndim == 1 and arr.size == 3 * n:
            arr = arr.reshape(n, 3)
        if arr.shape != (n, 3):
            raise ValueError(f"displacement values must have shape ({n}, 3), got {arr.shape}")
        self.values = arr
        if not (np.isfinite(self.frequency) and self.frequency > 0):
            raise ValueError(f"frequency must be positive, got {self.frequency!r}")

    @property
    def omega(self) -> float:
        """Angular frequency in rad/s."""
        return 2.0 * np.pi * self.frequency

    def component(self, axis: int) -> ComplexScalarField:
        return ComplexScalarField(self.grid, self.values[:, axis].copy())

    def as_volume(self) -> np.ndarray:
        """Values as an (nx, ny, nz, 3) array indexed [i, j, k, component]."""
        return self.values.reshape(self.grid.shape + (3,), order="F")

    def copy(self) -> "DisplacementField":
        return DisplacementField(self.grid, self.values.copy(), self.frequency)


@dataclass
class MultiFrequencyDataset:
    """Ordered displacement fields, one per drive frequency, sharing one grid."""

    entries: list[DisplacementField]
    density: float

    def __post_init__(self):
        if not self.entries:
            raise ValueError("dataset needs at least one displacement field")
        g = self.entries[0].grid
        for e in self.entries[1:]:
            if not g.same_lattice(e.grid):
                raise ValueError("all entries must share one voxel grid")
        freqs = [e.frequency for e in self.entries]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError(f"frequencies must be strictly increasing, got {freqs}")
        if not (np.isfinite(self.density) and self.density > 0):
            raise ValueError(f"density must be positive, got {self.density!r}")

    @property
    def grid(self) -> VoxelGrid:
        return self.entries[0].grid

    @property
    def frequencies(self) -> list[float]:
        return [e.frequency for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RegionMask:
    """Boolean per-voxel mask used to scope statistics."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=bool)
        if arr.ndim == 3:
            arr = arr.reshape(-1, order="F")
        if arr.shape != (self.grid.num_voxels,):
            raise ValueError("mask shape does not match grid")
        self.values = arr

    @property
    def count(self) -> int:
        return int(self.values.sum())

    def require_nonempty(self):
        if self.count == 0:
            raise ValueError("mask selects no voxels")
        return self

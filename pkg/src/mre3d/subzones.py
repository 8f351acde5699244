"""Overlapping cubic subzones covering a voxel grid.

Zone boxes are placed at stride intervals along each axis; the last box per
axis is clamped flush with the grid boundary so coverage is complete.  Zone
sizes come from physical targets (millimeters) rounded to whole voxels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import VoxelGrid


@dataclass(frozen=True)
class ZoneBox:
    """Half-open voxel index ranges [lo, hi) per axis."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def num_voxels(self) -> int:
        s = self.shape
        return s[0] * s[1] * s[2]


@dataclass
class SubzonePartition:
    grid: VoxelGrid
    zones: list[ZoneBox]
    cover_count: np.ndarray

    def __post_init__(self):
        if self.cover_count.min() < 1:
            raise ValueError("partition leaves voxels uncovered")

    def __len__(self):
        return len(self.zones)

    def node_indices(self, zone: ZoneBox) -> np.ndarray:
        """Flat grid indices of the zone's voxels, x-fastest within the zone."""
        g = self.grid
        ii, jj, kk = np.meshgrid(
            np.arange(zone.lo[0], zone.hi[0]),
            np.arange(zone.lo[1], zone.hi[1]),
            np.arange(zone.lo[2], zone.hi[2]),
            indexing="ij",
        )
        return (
            ii.reshape(-1, order="F")
            + g.nx * (jj.reshape(-1, order="F") + g.ny * kk.reshape(-1, order="F"))
        )

    def element_indices(self, zone: ZoneBox) -> np.ndarray:
        """Flat global element indices of elements fully inside the zone."""
        g = self.grid
        enx, eny = g.nx - 1, g.ny - 1
        ii, jj, kk = np.meshgrid(
            np.arange(zone.lo[0], zone.hi[0] - 1),
            np.arange(zone.lo[1], zone.hi[1] - 1),
            np.arange(zone.lo[2], zone.hi[2] - 1),
            indexing="ij",
        )
        return (
            ii.reshape(-1, order="F")
            + enx * (jj.reshape(-1, order="F") + eny * kk.reshape(-1, order="F"))
        )


def _axis_starts(n: int, zone_vox: int, stride_vox: int) -> list[int]:
    starts = []
    s = 0
    while s + zone_vox <= n:
        starts.append(s)
        s += stride_vox
    final = n - zone_vox
    if starts[-1] != final:
        starts.append(final)
    return starts


def partition_subzones(
    grid: VoxelGrid, zone_mm: float = 21.0, stride_mm: float = 17.0
) -> SubzonePartition:
    """Place overlapping cubic zones over the grid.

    Per axis the zone edge is round(zone_mm / spacing) voxels (capped at the
    grid size) and the stride is floor(stride_mm / spacing) voxels.  Zones
    smaller than 3 voxels on any axis are rejected, since they would carry
    fewer than 2 elements.
    """
    if not (zone_mm >= stride_mm > 0):
        raise ValueError("need zone_mm >= stride_mm > 0")
    axes = []
    for n, h in zip(grid.shape, grid.spacing):
        h_mm = h * 1000.0
        zone_vox = min(int(round(zone_mm / h_mm)), n)
        stride_vox = max(int(np.floor(stride_mm / h_mm)), 1)
        if zone_vox < 3:
            raise ValueError(f"zone of {zone_vox} voxels is below the 3-voxel minimum")
        axes.append(_axis_starts(n, zone_vox, stride_vox) if zone_vox < n else [0])
        axes[-1] = sorted(set(axes[-1]))
        axes[-1] = [(s, zone_vox) for s in axes[-1]]
    zones = []
    for sz, zz in axes[2]:
        for sy, zy in axes[1]:
            for sx, zx in axes[0]:
                zones.append(ZoneBox((sx, sy, sz), (sx + zx, sy + zy, sz + zz)))
    cover = np.zeros(grid.shape, dtype=np.int32)
    for z in zones:
        cover[z.lo[0] : z.hi[0], z.lo[1] : z.hi[1], z.lo[2] : z.hi[2]] += 1
    part = SubzonePartition(grid, zones, cover.reshape(-1, order="F"))
    return part

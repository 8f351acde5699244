"""Quantitative evaluation of reconstructed modulus maps."""

from __future__ import annotations

import numpy as np

from .grid import ComplexScalarField, RegionMask


def _part_values(field: ComplexScalarField, part: str) -> np.ndarray:
    if part == "real":
        return field.values.real
    if part == "imag":
        return field.values.imag
    raise ValueError(f"part must be 'real' or 'imag', got {part!r}")


def rmse(
    mu_rec: ComplexScalarField,
    mu_gt: ComplexScalarField,
    mask: RegionMask,
    part: str = "real",
    conventional: bool = False,
) -> float:
    """Relative error aggregate sqrt(mean(|(rec - gt)/gt|)) over a mask.

    The absolute relative errors are averaged BEFORE the square root (an L1
    norm inside the root); ``conventional=True`` switches to the usual
    root-mean-square of the relative errors for sanity comparisons.
    """
    if not mu_rec.grid.same_lattice(mu_gt.grid) or not mu_rec.grid.same_lattice(mask.grid):
        raise ValueError("rmse requires rec, gt and mask on one grid")
    mask.require_nonempty()
    rec = _part_values(mu_rec, part)[mask.values]
    gt = _part_values(mu_gt, part)[mask.values]
    if np.any(gt == 0):
        raise ValueError("ground-truth values must be nonzero on the mask")
    rel = np.abs((rec - gt) / gt)
    if conventional:
        return float(np.sqrt(np.mean(rel**2)))
    return float(np.sqrt(np.mean(rel)))


def cnr(field_values, mask_inc: RegionMask, mask_bkg: RegionMask) -> float:
    """Contrast-to-noise ratio 2 (m_inc - m_bkg)^2 / (s_bkg^2 + s_inc^2).

    ``field_values`` may be a ComplexScalarField (its real part is used) or a
    real per-voxel array.  Sample standard deviations (ddof=1) enter the
    denominator, so each mask needs at least 2 voxels.
    """
    if isinstance(field_values, ComplexScalarField):
        vals = field_values.values.real
    else:
        vals = np.asarray(field_values, dtype=float).reshape(-1)
    for m in (mask_inc, mask_bkg):
        if m.count < 2:
            raise ValueError("cnr needs at least 2 voxels per region")
    inc = vals[mask_inc.values]
    bkg = vals[mask_bkg.values]
    var_sum = inc.var(ddof=1) + bkg.var(ddof=1)
    if var_sum == 0:
        raise ValueError("cnr undefined: both regions have zero variance")
    return float(2.0 * (inc.mean() - bkg.mean()) ** 2 / var_sum)


def icc(pairs) -> float:
    """Two-way absolute-agreement single-measure intraclass correlation.

    ``pairs`` is a sequence of (method_value, reference_value).  Computed
    from the two-way ANOVA decomposition with subjects as rows and the two
    sources as columns.
    """
    arr = np.asarray(list(pairs), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ValueError("icc needs at least 2 (method, reference) pairs")
    n, k = arr.shape
    grand = arr.mean()
    row_means = arr.mean(axis=1)
    col_means = arr.mean(axis=0)
    ss_total = ((arr - grand) ** 2).sum()
    ss_rows = k * ((row_means - grand) ** 2).sum()
    ss_cols = n * ((col_means - grand) ** 2).sum()
    ss_err = ss_total - ss_rows - ss_cols
    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_err = ss_err / ((n - 1) * (k - 1))
    denom = ms_rows + (k - 1) * ms_err + (k / n) * (ms_cols - ms_err)
    if denom == 0:
        raise ValueError("icc undefined for degenerate (identical) inputs")
    return float((ms_rows - ms_err) / denom)


def line_profile(field: ComplexScalarField, start, end):
    """Nearest-voxel samples along the discrete segment from start to end.

    ``start`` and ``end`` are integer voxel coordinates.  Returns a list of
    (arc_length_mm, complex value) with one sample per step of the dominant
    axis.
    """
    g = field.grid
    start = np.asarray(start, dtype=int)
    end = np.asarray(end, dtype=int)
    for p in (start, end):
        if np.any(p < 0) or np.any(p >= np.array(g.shape)):
            raise ValueError(f"profile endpoint {tuple(p)} outside grid {g.shape}")
    steps = int(np.max(np.abs(end - start)))
    ts = np.linspace(0.0, 1.0, steps + 1)
    pts = start[None, :] + ts[:, None] * (end - start)[None, :]
    idx = np.rint(pts).astype(int)
    spacing = np.array(g.spacing)
    arc = np.linalg.norm((pts - pts[0]) * spacing, axis=1) * 1000.0
    vol = field.as_volume()
    vals = vol[idx[:, 0], idx[:, 1], idx[:, 2]]
    return list(zip(arc.tolist(), vals.tolist()))


def young_from_shear(mu: complex) -> complex:
    """Young's modulus of an incompressible medium, E = 3 mu."""
    return 3.0 * complex(mu)

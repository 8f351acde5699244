"""Sectioned key/value pipeline configuration.

The on-disk format is INI-style (configparser): a [grid] and [phantom]
section describe the geometry and materials, [simulate] / [reconstruct] /
[evaluate] / [export] configure the respective commands.  Geometry is given
in millimeters, frequencies in Hz, moduli in Pa as "re im" pairs.  Inclusion
and region values use a small semicolon syntax:

    inclusion.1 = sphere; center_mm = 24 24 24; radius_mm = 5; mu_pa = 20000 0
    inclusion.2 = cylinder; point_mm = 14 14 0; axis = 0 0 1; radius_mm = 4; mu_pa = 5000 600
    region.inc = sphere; center_mm = 24 24 24; radius_mm = 3.5
    region.bkg = complement; margin_mm = 3; border_vox = 5
"""

from __future__ import annotations

import configparser

import numpy as np

from .grid import RegionMask, VoxelGrid
from .phantom import CylinderInclusion, PhantomSpec, SphereInclusion


class ConfigError(ValueError):
    pass


def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    return cp


def _floats(text, n=None, ctx=""):
    try:
        vals = [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{ctx}: expected numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{ctx}: expected {n} numbers, got {len(vals)}")
    return vals


def _complex_pair(text, ctx=""):
    vals = _floats(text, ctx=ctx)
    if len(vals) == 1:
        return complex(vals[0], 0.0)
    if len(vals) == 2:
        return complex(vals[0], vals[1])
    raise ConfigError(f"{ctx}: modulus needs 're' or 're im', got {text!r}")


def _mini_syntax(text, ctx=""):
    """'kind; key = a b c; key2 = d' -> (kind, {key: 'a b c', ...})"""
    parts = [p.strip() for p in text.split(";") if p.strip()]
    if not parts:
        raise ConfigError(f"{ctx}: empty entry")
    kind = parts[0].lower()
    kv = {}
    for p in parts[1:]:
        if "=" not in p:
            raise ConfigError(f"{ctx}: expected 'key = value' in {p!r}")
        k, v = p.split("=", 1)
        kv[k.strip().lower()] = v.strip()
    return kind, kv


def parse_grid(cp) -> VoxelGrid:
    if "grid" not in cp:
        raise ConfigError("missing [grid] section")
    sec = cp["grid"]
    try:
        nx = sec.getint("nx")
        ny = sec.getint("ny")
        nz = sec.getint("nz")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[grid]: nx/ny/nz must be integers ({exc})") from exc
    if nx is None or ny is None or nz is None:
        raise ConfigError("[grid]: nx, ny, nz are required")
    if "spacing_mm" in sec:
        h = _floats(sec["spacing_mm"], ctx="[grid] spacing_mm")
        if len(h) == 1:
            hx = hy = hz = h[0]
        elif len(h) == 3:
            hx, hy, hz = h
        else:
            raise ConfigError("[grid] spacing_mm: give 1 or 3 values")
    else:
        raise ConfigError("[grid]: spacing_mm is required")
    try:
        return VoxelGrid(nx, ny, nz, hx / 1000.0, hy / 1000.0, hz / 1000.0)
    except ValueError as exc:
        raise ConfigError(f"[grid]: {exc}") from exc


def _parse_shape(kind, kv, ctx, mu=None):
    mm = 1e-3
    if kind == "sphere":
        center = _floats(kv.get("center_mm", ""), 3, f"{ctx} center_mm")
        radius = _floats(kv.get("radius_mm", ""), 1, f"{ctx} radius_mm")[0]
        return SphereInclusion(tuple(c * mm for c in center), radius * mm, mu or 0j)
    if kind == "cylinder":
        point = _floats(kv.get("point_mm", ""), 3, f"{ctx} point_mm")
        axis = _floats(kv.get("axis", ""), 3, f"{ctx} axis")
        radius = _floats(kv.get("radius_mm", ""), 1, f"{ctx} radius_mm")[0]
        return CylinderInclusion(tuple(p * mm for p in point), tuple(axis), radius * mm, mu or 0j)
    raise ConfigError(f"{ctx}: unknown shape {kind!r}")


def parse_phantom(cp) -> PhantomSpec:
    if "phantom" not in cp:
        raise ConfigError("missing [phantom] section")
    sec = cp["phantom"]
    try:
        background = _complex_pair(sec.get("background_mu_pa", ""), "[phantom] background_mu_pa")
        density = float(sec.get("density", ""))
        poisson = float(sec.get("poisson_ratio", ""))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[phantom]: {exc}") from exc
    inclusions = []
    for key in sorted(k for k in sec if k.startswith("inclusion.")):
        kind, kv = _mini_syntax(sec[key], f"[phantom] {key}")
        if "mu_pa" not in kv:
            raise ConfigError(f"[phantom] {key}: mu_pa is required")
        mu = _complex_pair(kv["mu_pa"], f"[phantom] {key} mu_pa")
        inclusions.append(_parse_shape(kind, kv, f"[phantom] {key}", mu))
    try:
        return PhantomSpec(background, density, poisson, inclusions)
    except ValueError as exc:
        raise ConfigError(f"[phantom]: {exc}") from exc


def parse_regions(cp, grid: VoxelGrid):
    """Named RegionMasks from [evaluate] region.* entries.

    'complement' regions select everything at least margin_mm away from all
    shape regions, excluding a border_vox shell at the grid faces.
    """
    if "evaluate" not in cp:
        raise ConfigError("missing [evaluate] section")
    sec = cp["evaluate"]
    shapes = {}
    complements = {}
    for key in sorted(k for k in sec if k.startswith("region.")):
        name = key.split(".", 1)[1]
        kind, kv = _mini_syntax(sec[key], f"[evaluate] {key}")
        if kind == "complement":
            complements[name] = kv
        else:
            shapes[name] = (kind, kv)
    pts = grid.voxel_centers()
    masks = {}
    inside_any = np.zeros(grid.num_voxels, dtype=bool)
    enlarged_any = np.zeros(grid.num_voxels, dtype=bool)
    for name, (kind, kv) in shapes.items():
        shape = _parse_shape(kind, kv, f"[evaluate] region.{name}")
        masks[name] = RegionMask(grid, shape.contains(pts))
        inside_any |= masks[name].values
    for name, kv in complements.items():
        margin = float(kv.get("margin_mm", "0")) * 1e-3
        border = int(float(kv.get("border_vox", "0")))
        enlarged_any[:] = False
        for sname, (kind, kv2) in shapes.items():
            shape = _parse_shape(kind, kv2, f"[evaluate] region.{sname}")
            if isinstance(shape, SphereInclusion):
                bigger = SphereInclusion(shape.center, shape.radius + margin, shape.mu)
            else:
                bigger = CylinderInclusion(shape.point, shape.axis, shape.radius + margin, shape.mu)
            enlarged_any |= bigger.contains(pts)
        keep = ~enlarged_any
        if border > 0:
            vol = keep.reshape(grid.shape, order="F").copy()
            vol[:border, :, :] = vol[-border:, :, :] = False
            vol[:, :border, :] = vol[:, -border:, :] = False
            vol[:, :, :border] = vol[:, :, -border:] = False
            keep = vol.reshape(-1, order="F")
        masks[name] = RegionMask(grid, keep)
    return masks


def parse_profile(sec, grid: VoxelGrid, ctx="[evaluate] profile"):
    """'i0 j0 k0 -> i1 j1 k1' in voxel indices."""
    text = sec.get("profile")
    if not text:
        return None
    if "->" not in text:
        raise ConfigError(f"{ctx}: expected 'i j k -> i j k'")
    a, b = text.split("->")
    start = [int(v) for v in _floats(a, 3, ctx)]
    end = [int(v) for v in _floats(b, 3, ctx)]
    return start, end


_AXES = {"x": 0, "y": 1, "z": 2}


def parse_simulate(cp):
    if "simulate" not in cp:
        raise ConfigError("missing [simulate] section")
    sec = cp["simulate"]
    freqs = _floats(sec.get("frequencies_hz", ""), ctx="[simulate] frequencies_hz")
    if not freqs or any(f <= 0 for f in freqs):
        raise ConfigError("[simulate] frequencies_hz: need positive frequencies")
    bc = sec.get("bc", "fig2").strip().lower()
    if bc not in ("fig2", "column"):
        raise ConfigError(f"[simulate] bc: unknown preset {bc!r}")
    drive_axis = sec.get("drive_axis", "x").strip().lower()
    if drive_axis not in _AXES:
        raise ConfigError(f"[simulate] drive_axis: must be x, y or z")
    out = dict(
        frequencies=sorted(freqs),
        bc=bc,
        drive_axis=_AXES[drive_axis],
        amplitude=float(sec.get("amplitude_um", "50")) * 1e-6,
        snr_db=float(sec.get("snr_db", "inf")),
        seed=int(sec.get("seed", "0")),
    )
    if out["amplitude"] <= 0:
        raise ConfigError("[simulate] amplitude_um must be positive")
    return out


def parse_reconstruct(cp):
    if "reconstruct" not in cp:
        raise ConfigError("missing [reconstruct] section")
    sec = cp["reconstruct"]
    mode = sec.get("mode", "mersa").strip().lower()
    if mode not in ("ersa", "mersa", "direct"):
        raise ConfigError(f"[reconstruct] mode: unknown mode {mode!r}")
    out = dict(mode=mode)
    if "frequency_indices" in sec:
        out["frequency_indices"] = tuple(int(v) for v in _floats(sec["frequency_indices"]))
    out["zone_mm"] = float(sec.get("zone_mm", "21"))
    out["stride_mm"] = float(sec.get("stride_mm", "17"))
    overrides = {}
    if "tol_mu" in sec:
        overrides["tol_mu"] = float(sec["tol_mu"])
    if "max_iter" in sec:
        overrides["max_iter"] = int(sec["max_iter"])
    if "mu_re_bounds_pa" in sec:
        overrides["mu_re_bounds"] = tuple(_floats(sec["mu_re_bounds_pa"], 2, "mu_re_bounds_pa"))
    if "mu_im_bounds_pa" in sec:
        overrides["mu_im_bounds"] = tuple(_floats(sec["mu_im_bounds_pa"], 2, "mu_im_bounds_pa"))
    for name in ("alpha_c", "alpha_mu", "data_weight", "alpha_x", "alpha_w",
                 "gamma_u", "gamma_mu", "gamma_p"):
        if name in sec:
            overrides[name] = float(sec[name])
    out["overrides"] = overrides
    return out


def parse_export(cp):
    if "export" not in cp:
        raise ConfigError("missing [export] section")
    sec = cp["export"]
    axis = sec.get("axis", "z").strip().lower()
    if axis not in _AXES:
        raise ConfigError("[export] axis: must be x, y or z")
    part = sec.get("part", "real").strip().lower()
    if part not in ("real", "imag"):
        raise ConfigError("[export] part: must be real or imag")
    window = _floats(sec.get("window_pa", "0 40000"), 2, "[export] window_pa")
    if window[0] >= window[1]:
        raise ConfigError("[export] window_pa: need lo < hi")
    out = dict(
        field=sec.get("field", "mu").strip(),
        part=part,
        axis=_AXES[axis],
        index=int(sec.get("index", "-1")),
        window=tuple(window),
    )
    return out

"""Command-line front end: simulate, reconstruct, evaluate, export.

Every command takes ``--config PATH`` (the sectioned key/value file described
in the README) plus ``--out DIR``; ``--seed`` overrides the config seed and
``--threads`` (or the MRE_SOLVE_THREADS environment variable) caps the linear
algebra thread pools.  The config file is copied into the output directory so
results are reproducible from the output alone.

Exit codes: 0 success (and convergence for iterative reconstruction),
2 configuration/input error, 3 iteration limit reached before the modulus
tolerance, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MAXITER = 3
EXIT_NUMERICAL = 4


def _apply_threads(threads):
    if threads is None:
        env = os.environ.get("MRE_SOLVE_THREADS")
        threads = int(env) if env else None
    if threads is None:
        return None
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=int(threads))
    except ImportError:  # pragma: no cover - best effort without threadpoolctl
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    return int(threads)


def _prepare_outdir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    dest = os.path.join(out, os.path.basename(args.config))
    src = os.path.abspath(args.config)
    if os.path.abspath(dest) != src:
        shutil.copyfile(src, dest)
    return out


def cmd_simulate(args):
    import numpy as np

    from .config import load_config, parse_grid, parse_phantom, parse_simulate
    from .forward import column_boundary, fig2_boundary, generate_dataset, shear_wavelength
    from .mvol import write_manifest, write_mvol

    cp = load_config(args.config)
    grid = parse_grid(cp)
    phantom = parse_phantom(cp)
    sim = parse_simulate(cp)
    seed = args.seed if args.seed is not None else sim["seed"]
    out = _prepare_outdir(args)

    if sim["bc"] == "fig2":
        bc = fig2_boundary(grid, sim["amplitude"], sim["drive_axis"])
    else:
        bc = lambda f: column_boundary(
            grid, phantom.background_mu, phantom.density, f, sim["amplitude"], sim["drive_axis"]
        )
    dataset = generate_dataset(
        phantom, grid, sim["frequencies"], bc, snr_db=sim["snr_db"], seed=seed
    )
    files = []
    for entry in dataset.entries:
        lam = shear_wavelength(phantom.background_mu, phantom.density, entry.frequency)
        r_m = grid.hx / lam
        print(f"f = {entry.frequency:g} Hz: wavelength {lam*1000:.2f} mm, r_m = {r_m:.4f}")
        fname = f"u_{entry.frequency:g}hz.mvol"
        write_mvol(os.path.join(out, fname), entry)
        files.append(fname)
    write_manifest(
        os.path.join(out, "manifest.txt"),
        dataset,
        files,
        phantom.poisson_ratio,
        seed,
        sim["snr_db"],
    )
    print(f"wrote {len(files)} volumes + manifest to {out}")
    return EXIT_OK


def cmd_reconstruct(args):
    from .admm import ReconstructionConfig, run_reconstruction
    from .config import ConfigError, load_config, parse_reconstruct
    from .mvol import read_manifest, write_mvol, write_trace

    cp = load_config(args.config)
    rec = parse_reconstruct(cp)
    sec = cp["reconstruct"]
    manifest = sec.get("manifest")
    if not manifest:
        raise ConfigError("[reconstruct] manifest: path to the dataset manifest is required")
    if not os.path.isabs(manifest):
        manifest = os.path.join(os.path.dirname(os.path.abspath(args.config)), manifest)
    if not os.path.exists(manifest):
        raise ConfigError(f"[reconstruct] manifest: {manifest} does not exist")
    dataset, _meta = read_manifest(manifest)
    out = _prepare_outdir(args)

    cfg = ReconstructionConfig(
        mode=rec["mode"],
        frequency_indices=rec.get("frequency_indices"),
        zone_mm=rec["zone_mm"],
        stride_mm=rec["stride_mm"],
        overrides=rec["overrides"],
        verbose=args.verbose,
    )
    result = run_reconstruction(dataset, rec["mode"], cfg)

    write_mvol(os.path.join(out, "mu.mvol"), result.mu)
    write_mvol(os.path.join(out, "mu_elements.mvol"), result.mu_elements)
    for entry in result.displacement:
        write_mvol(os.path.join(out, f"u_{entry.frequency:g}hz.mvol"), entry)
    for entry, disp in zip(result.pressure, result.displacement):
        write_mvol(os.path.join(out, f"p_{disp.frequency:g}hz.mvol"), entry)
    write_trace(os.path.join(out, "trace.csv"), result.trace)
    print(
        f"mode={rec['mode']} iterations={result.iterations} "
        f"converged={result.converged} -> {out}"
    )
    if rec["mode"] in ("ersa", "mersa") and not result.converged:
        return EXIT_MAXITER
    return EXIT_OK


def cmd_evaluate(args):
    import numpy as np

    from .config import ConfigError, load_config, parse_grid, parse_phantom, parse_profile, parse_regions
    from .grid import RegionMask
    from .metrics import cnr, icc, line_profile, rmse, young_from_shear
    from .mvol import read_mvol
    from .phantom import rasterize_phantom

    cp = load_config(args.config)
    if "evaluate" not in cp:
        raise ConfigError("missing [evaluate] section")
    sec = cp["evaluate"]
    out = _prepare_outdir(args)

    rec_path = sec.get("rec", "mu.mvol")
    if not os.path.isabs(rec_path):
        cand = os.path.join(out, rec_path)
        rec_path = cand if os.path.exists(cand) else os.path.join(
            os.path.dirname(os.path.abspath(args.config)), rec_path
        )
    if not os.path.exists(rec_path):
        raise ConfigError(f"[evaluate] rec: {rec_path} does not exist")
    mu_rec = read_mvol(rec_path)

    gt_source = sec.get("gt", "phantom").strip()
    if gt_source == "phantom":
        grid = parse_grid(cp)
        phantom = parse_phantom(cp)
        mu_gt = rasterize_phantom(phantom, grid)
    else:
        gt_path = gt_source
        if not os.path.isabs(gt_path):
            gt_path = os.path.join(os.path.dirname(os.path.abspath(args.config)), gt_path)
        mu_gt = read_mvol(gt_path)
    if not mu_rec.grid.same_lattice(mu_gt.grid):
        raise ConfigError(
            f"grid mismatch: reconstruction {mu_rec.grid.shape} vs ground truth {mu_gt.grid.shape}"
        )

    masks = parse_regions(cp, mu_rec.grid)
    if not masks:
        raise ConfigError("[evaluate]: define at least one region.*")
    bkg_name = sec.get("background_region", "background")

    rows = []
    pairs = []
    for name, mask in sorted(masks.items()):
        mask.require_nonempty()
        rec_mean = float(mu_rec.values.real[mask.values].mean())
        gt_mean = float(mu_gt.values.real[mask.values].mean())
        pairs.append((rec_mean, gt_mean))
        rows.append(("mean_re_pa", name, rec_mean))
        rows.append(("gt_mean_re_pa", name, gt_mean))
    union = np.zeros(mu_rec.grid.num_voxels, dtype=bool)
    for mask in masks.values():
        union |= mask.values
    union_mask = RegionMask(mu_rec.grid, union)
    rows.append(("rmse_e", "all_regions", rmse(mu_rec, mu_gt, union_mask, part="real")))
    if np.all(mu_gt.values.imag[union] != 0):
        rows.append(("rmse_v", "all_regions", rmse(mu_rec, mu_gt, union_mask, part="imag")))
    if bkg_name in masks:
        for name, mask in sorted(masks.items()):
            if name == bkg_name:
                continue
            rows.append(("cnr", name, cnr(mu_rec, mask, masks[bkg_name])))
    if len(pairs) >= 2:
        rows.append(("icc", "all_regions", icc(pairs)))
    rows.append(
        ("young_background_re_pa", "background",
         young_from_shear(complex(np.median(mu_rec.values.real), 0)).real)
    )

    metrics_path = os.path.join(out, "metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.write("metric,region,value\n")
        for metric, region, value in rows:
            fh.write(f"{metric},{region},{value!r}\n")

    prof = parse_profile(sec, mu_rec.grid)
    if prof is not None:
        samples = line_profile(mu_rec, prof[0], prof[1])
        with open(os.path.join(out, "profile.csv"), "w") as fh:
            fh.write("arc_mm,re,im\n")
            for arc, val in samples:
                fh.write(f"{arc!r},{val.real!r},{val.imag!r}\n")
    print(f"wrote metrics to {metrics_path}")
    return EXIT_OK


def cmd_export(args):
    import numpy as np

    from .config import ConfigError, load_config, parse_export
    from .mvol import read_mvol

    cp = load_config(args.config)
    exp = parse_export(cp)
    out = _prepare_outdir(args)

    path = exp["field"]
    if not path.endswith(".mvol"):
        path += ".mvol"
    if not os.path.isabs(path):
        cand = os.path.join(out, path)
        path = cand if os.path.exists(cand) else os.path.join(
            os.path.dirname(os.path.abspath(args.config)), path
        )
    if not os.path.exists(path):
        raise ConfigError(f"[export] field: {path} does not exist")
    field = read_mvol(path)
    vol = field.as_volume() if hasattr(field, "as_volume") else None
    if vol.ndim == 4:
        raise ConfigError("[export]: slicing displacement volumes is not supported; export mu")
    axis = exp["axis"]
    n_axis = field.grid.shape[axis]
    index = exp["index"] if exp["index"] >= 0 else n_axis // 2
    if not (0 <= index < n_axis):
        raise ConfigError(f"[export] index {index} out of range [0, {n_axis})")
    sl = [slice(None)] * 3
    sl[axis] = index
    plane = vol[tuple(sl)]
    data = plane.real if exp["part"] == "real" else plane.imag

    lo, hi = exp["window"]
    scaled = np.rint((data - lo) / (hi - lo) * 255.0)
    pix = np.clip(scaled, 0, 255).astype(int)

    stem = os.path.splitext(os.path.basename(path))[0]
    axis_name = "xyz"[axis]
    tag = f"{stem}_{exp['part']}_{axis_name}{index}_win{lo:g}_{hi:g}"
    pgm_path = os.path.join(out, tag + ".pgm")
    with open(pgm_path, "w") as fh:
        fh.write(f"P2\n{pix.shape[1]} {pix.shape[0]}\n255\n")
        for row in pix:
            fh.write(" ".join(str(v) for v in row) + "\n")

    csv_path = os.path.join(out, tag + ".csv")
    with open(csv_path, "w") as fh:
        fh.write("i,j,re,im\n")
        ni, nj = plane.shape
        for jj in range(nj):
            for ii in range(ni):
                v = plane[ii, jj]
                fh.write(f"{ii},{jj},{v.real!r},{v.imag!r}\n")
    print(f"wrote {pgm_path} and {csv_path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mre3d",
        description="Simulate shear wave volumes and reconstruct complex modulus maps.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap linear algebra threads (default: MRE_SOLVE_THREADS or library default)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, helptext in (
        ("simulate", cmd_simulate, "generate synthetic displacement volumes"),
        ("reconstruct", cmd_reconstruct, "reconstruct the modulus from a dataset"),
        ("evaluate", cmd_evaluate, "compute metrics against ground truth"),
        ("export", cmd_export, "export a slice as PGM image and CSV"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="pipeline config file")
        p.add_argument("--out", default=None, help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--verbose", action="store_true", help="per-iteration progress")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    _apply_threads(args.threads)
    from .config import ConfigError
    from .forward import SolverError
    from .mvol import MvolError

    try:
        return args.func(args)
    except (ConfigError, MvolError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

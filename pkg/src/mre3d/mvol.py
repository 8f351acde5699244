"""MVOL v1 volume files, dataset manifests and trace CSV.

An MVOL file is a short ASCII header followed by raw little-endian float64
(re, im) pairs:

    mvol 1
    dims nx ny nz
    spacing hx hy hz
    components c
    frequency f
    data
    <nx*ny*nz*c complex values>

Values are ordered x-fastest over voxels; for multi-component fields the c
components of one voxel are stored consecutively.
"""

from __future__ import annotations

import os

import numpy as np

from .grid import ComplexScalarField, DisplacementField, MultiFrequencyDataset, VoxelGrid


class MvolError(ValueError):
    pass


def write_mvol(path, field):
    """Write a ComplexScalarField (c=1) or DisplacementField (c=3)."""
    if isinstance(field, DisplacementField):
        comps, freq = 3, field.frequency
        values = field.values
    elif isinstance(field, ComplexScalarField):
        comps, freq = 1, 0.0
        values = field.values.reshape(-1, 1)
    else:
        raise TypeError(f"cannot serialize {type(field).__name__}")
    g = field.grid
    header = (
        f"mvol 1\n"
        f"dims {g.nx} {g.ny} {g.nz}\n"
        f"spacing {g.hx!r} {g.hy!r} {g.hz!r}\n"
        f"components {comps}\n"
        f"frequency {freq!r}\n"
        f"data\n"
    )
    flat = np.empty(values.shape[0] * comps * 2, dtype="<f8")
    inter = values.astype(np.complex128).reshape(-1)
    flat[0::2] = inter.real
    flat[1::2] = inter.imag
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(flat.tobytes())


def read_mvol(path):
    """Read an MVOL file back into the matching field type."""
    with open(path, "rb") as fh:
        blob = fh.read()
    lines = []
    pos = 0
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise MvolError(f"{path}: header truncated")
        line = blob[pos:nl].decode("ascii", errors="replace").strip()
        pos = nl + 1
        lines.append(line)
        if line == "data":
            break
        if len(lines) > 16:
            raise MvolError(f"{path}: no data marker in header")
    fields = {}
    for line in lines[:-1]:
        key, *rest = line.split()
        fields[key] = rest
    if fields.get("mvol") != ["1"]:
        raise MvolError(f"{path}: unsupported format tag {fields.get('mvol')}")
    try:
        nx, ny, nz = (int(v) for v in fields["dims"])
        hx, hy, hz = (float(v) for v in fields["spacing"])
        comps = int(fields["components"][0])
        freq = float(fields["frequency"][0])
    except (KeyError, ValueError) as exc:
        raise MvolError(f"{path}: malformed header ({exc})") from exc
    if comps not in (1, 3):
        raise MvolError(f"{path}: components must be 1 or 3, got {comps}")
    n = nx * ny * nz
    raw = np.frombuffer(blob, dtype="<f8", offset=pos)
    if raw.size != 2 * n * comps:
        raise MvolError(f"{path}: expected {2*n*comps} floats, found {raw.size}")
    values = raw[0::2] + 1j * raw[1::2]
    grid = VoxelGrid(nx, ny, nz, hx, hy, hz)
    if comps == 1:
        return ComplexScalarField(grid, values)
    if freq <= 0:
        raise MvolError(f"{path}: displacement volume needs a positive frequency")
    return DisplacementField(grid, values.reshape(n, 3), freq)


def write_manifest(path, dataset: MultiFrequencyDataset, files, poisson_ratio, seed, snr_db):
    """Text manifest tying the per-frequency MVOL files together."""
    lines = [
        "mvol-manifest 1",
        f"density {dataset.density!r}",
        f"poisson_ratio {poisson_ratio!r}",
        f"seed {seed}",
        f"snr_db {snr_db!r}",
        f"frequencies {' '.join(repr(e.frequency) for e in dataset.entries)}",
    ]
    for entry, fname in zip(dataset.entries, files):
        lines.append(f"file {entry.frequency!r} {fname}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    """Returns (dataset, meta dict).  File paths resolve relative to the manifest."""
    base = os.path.dirname(os.path.abspath(path))
    meta = {}
    files = []
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("mvol-manifest"):
        raise MvolError(f"{path}: not a dataset manifest")
    for ln in lines[1:]:
        key, *rest = ln.split()
        if key == "file":
            files.append((float(rest[0]), " ".join(rest[1:])))
        else:
            meta[key] = rest
    density = float(meta["density"][0])
    entries = []
    for freq, fname in sorted(files):
        field = read_mvol(os.path.join(base, fname))
        if not isinstance(field, DisplacementField):
            raise MvolError(f"{fname}: manifest entries must be displacement volumes")
        if abs(field.frequency - freq) > 1e-9 * max(1.0, freq):
            raise MvolError(f"{fname}: frequency disagrees with manifest")
        entries.append(field)
    dataset = MultiFrequencyDataset(entries, density)
    out = {
        "poisson_ratio": float(meta.get("poisson_ratio", ["nan"])[0]),
        "seed": int(meta.get("seed", ["0"])[0]),
        "snr_db": float(meta.get("snr_db", ["inf"])[0]),
    }
    return dataset, out


TRACE_HEADER = "iter,d_mu_l1,wave_residual,consensus_residual,kspace_residual"


def write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write(TRACE_HEADER + "\n")
        for row in trace:
            fh.write(
                f"{row['iter']},{row['d_mu_l1']!r},{row['wave_residual']!r},"
                f"{row['consensus_residual']!r},{row['kspace_residual']!r}\n"
            )


def read_trace(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TRACE_HEADER:
            raise MvolError(f"{path}: unexpected trace header {header!r}")
        for ln in fh:
            if not ln.strip():
                continue
            it, d, w, c, k = ln.strip().split(",")
            rows.append(
                dict(
                    iter=int(it),
                    d_mu_l1=float(d),
                    wave_residual=float(w),
                    consensus_residual=float(c),
                    kspace_residual=float(k),
                )
            )
    return rows

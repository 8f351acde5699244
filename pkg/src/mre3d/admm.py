"""Consensus ADMM reconstruction of the complex shear modulus.

The displacement volume is divided into overlapping subzones.  Each iteration
alternates five updates: a per-zone joint solve for local modulus and
pressure (a regularized direct inversion), a global box-constrained TV
denoise of the consensus modulus, a per-zone per-frequency displacement fit
against the wave operator, a k-space soft threshold of the fitted
displacement, and the scaled dual updates that accumulate the three
constraint residuals.  A single global solve of the linearized inversion
("direct" mode) is provided as the baseline.

Weights follow a fixed schedule expressed through largest eigenvalues and
transform maxima of the measured data; they are computed once (partly from
the data upfront, partly right after the first global modulus estimate) and
held fixed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    DofMap,
    assemble_inversion_operator,
    assemble_mass,
    assemble_pressure_coupling,
    element_to_node_values,
    forward_difference_gradient,
)
from .fields import plane_fit_gradient
from .forward import SolverError, max_eig
from .grid import (
    ComplexScalarField,
    DisplacementField,
    MultiFrequencyDataset,
    VoxelGrid,
)
from .subzones import SubzonePartition, partition_subzones

_SLU_OPTIONS = dict(SymmetricMode=True, DiagPivotThresh=0.001)


@dataclass
class AdmmParams:
    """Weight schedule and run limits.

    ``data_weight`` is the displacement-fidelity weight (the schedule's rho,
    kept separate from the material density).  Eigenvalue-based fields start
    as None and are filled by compute_params; overrides always win.
    """

    alpha_c: float = 1.0
    alpha_mu: float = None
    data_weight: float = None
    alpha_x: float = None
    alpha_w: float = None
    gamma_u: float = None
    gamma_mu: float = None
    gamma_p: float = None
    mu_re_bounds: tuple = (330.0, 40000.0)
    mu_im_bounds: tuple = (0.0, 10000.0)
    tol_mu: float = 1e-3
    max_iter: int = 100

    def validate(self):
        for name in ("alpha_c", "alpha_mu", "data_weight", "alpha_x", "alpha_w",
                     "gamma_u", "gamma_mu", "gamma_p"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        if not self.alpha_c > 0:
            raise ValueError("alpha_c must be positive")
        if self.mu_re_bounds[0] >= self.mu_re_bounds[1]:
            raise ValueError("mu_re_bounds must satisfy lo < hi")
        if self.mu_im_bounds[0] >= self.mu_im_bounds[1]:
            raise ValueError("mu_im_bounds must satisfy lo < hi")
        if not self.tol_mu > 0:
            raise ValueError("tol_mu must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        return self


@dataclass
class ParamOperators:
    """Assembled operators feeding the weight schedule.

    ku_per_freq comes from the measured data; wave_ops (the per-frequency
    shifted stiffness built from the first global modulus estimate) and
    mu1 arrive only after that estimate exists.
    """

    ku_per_freq: list = None
    kp: sp.spmatrix = None
    grad: sp.spmatrix = None
    fft_max_abs: float = None
    wave_ops: list = None
    mu1: ComplexScalarField = None


def orthonormal_fft_max_abs(dataset: MultiFrequencyDataset) -> float:
    """Largest coefficient magnitude of the per-component orthonormal 3D FFT."""
    best = 0.0
    shape = dataset.grid.shape
    for entry in dataset.entries:
        for c in range(3):
            vol = entry.values[:, c].reshape(shape, order="F")
            coeff = np.fft.fftn(vol, norm="ortho")
            best = max(best, float(np.abs(coeff).max()))
    return best


def compute_params(
    dataset: MultiFrequencyDataset,
    operators: ParamOperators,
    overrides: dict = None,
    base: AdmmParams = None,
) -> AdmmParams:
    """Fill the weight schedule from data-dependent operator extremes.

    Entries whose operators are absent stay None so a later call can finish
    the job; explicit overrides short-circuit the formulas entirely.
    """
    overrides = dict(overrides or {})
    p = base if base is not None else AdmmParams()

    def want(name):
        return name not in overrides and getattr(p, name) is None

    updates = {}
    if want("alpha_mu") and operators.ku_per_freq is not None:
        kus = operators.ku_per_freq
        n = kus[0].shape[1]
        def ku_normal(x):
            out = np.zeros(n, dtype=np.complex128)
            for ku in kus:
                out += ku.conj().T @ (ku @ x)
            return out
        updates["alpha_mu"] = p.alpha_c * max_eig(ku_normal, n=n) * 2.0**-12

    if operators.wave_ops is not None and (
        want("data_weight") or want("alpha_x") or want("alpha_w")
    ):
        top = 0.0
        for a in operators.wave_ops:
            n = a.shape[0]
            ah = a.conj().T.tocsr()
            top = max(top, max_eig(lambda x: ah @ (a @ x), n=n))
        rho = top * 2.0**-4
        if want("data_weight"):
            updates["data_weight"] = rho
        if want("alpha_x"):
            updates["alpha_x"] = 1e-3 * rho
        if want("alpha_w"):
            updates["alpha_w"] = rho * 1e-2
    if want("gamma_u"):
        fmax = operators.fft_max_abs
        if fmax is None:
            fmax = orthonormal_fft_max_abs(dataset)
        updates["gamma_u"] = fmax * 2.0**-7
    if want("gamma_mu") and operators.mu1 is not None:
        grads = plane_fit_gradient(operators.mu1, span=3)
        gmax = max(float(np.abs(g.values).max()) for g in grads)
        updates["gamma_mu"] = gmax * 2.0**-14
    if want("gamma_p") and operators.kp is not None and operators.grad is not None:
        kp = operators.kp
        gr = operators.grad
        kph = kp.conj().T.tocsr()
        grh = gr.conj().T.tocsr()
        top_kp = max_eig(lambda x: kph @ (kp @ x), n=kp.shape[1])
        top_gr = max_eig(lambda x: grh @ (gr @ x), n=gr.shape[1])
        updates["gamma_p"] = top_kp / top_gr * 2.0**-16

    for k, v in overrides.items():
        if not hasattr(p, k):
            raise ValueError(f"unknown parameter override {k!r}")
        updates[k] = v
    return replace(p, **updates)


# ---------------------------------------------------------------------------
# zone machinery


class _ZoneShapeOps:
    """Operators shared by every zone of one voxel shape."""

    def __init__(self, shape, spacing, density, gamma_p, alpha_c):
        self.shape = shape
        zgrid = VoxelGrid(shape[0], shape[1], shape[2], *spacing)
        self.dof = DofMap(zgrid)
        self.mass1 = assemble_mass(1.0, self.dof).tocsr()
        self.kp = assemble_pressure_coupling(self.dof).tocsr()
        self.kp_h = self.kp.conj().T.tocsr()
        self.grad = forward_difference_gradient(zgrid.element_grid()).tocsr()
        self.qq = (alpha_c * (self.kp_h @ self.kp) + gamma_p * (self.grad.conj().T @ self.grad)).tocsr()
        self.density = density

    def wave_operator(self, nu, omega):
        """K(nu) - omega^2 M(rho) on the zone lattice (free boundaries)."""
        k = self.dof.assemble_varying_blocks(nu[:, None, None] * self.dof.k0[None, :, :])
        return (k - (omega**2) * self.density * self.mass1).tocsr()

    def inversion_operator(self, w_flat, omega):
        ku, f1 = assemble_inversion_operator(w_flat, self.dof, omega=omega)
        return ku.tocsr(), self.density * f1


class _Zone:
    def __init__(self, box, partition: SubzonePartition, ops: _ZoneShapeOps, data: np.ndarray):
        self.box = box
        self.ops = ops
        self.node_idx = partition.node_indices(box)
        self.elem_idx = partition.element_indices(box)
        self.num_nodes = self.node_idx.size
        self.num_elements = self.elem_idx.size
        # measured displacement restricted to the zone, (J, zn, 3)
        self.v = data[:, self.node_idx, :].copy()

    def fft(self, w):
        """(zn, 3) -> (zn, 3) per-component orthonormal 3D FFT."""
        s = self.box.shape
        out = np.empty_like(w)
        for c in range(3):
            vol = w[:, c].reshape(s, order="F")
            out[:, c] = np.fft.fftn(vol, norm="ortho").reshape(-1, order="F")
        return out

    def ifft(self, what):
        s = self.box.shape
        out = np.empty_like(what)
        for c in range(3):
            vol = what[:, c].reshape(s, order="F")
            out[:, c] = np.fft.ifftn(vol, norm="ortho").reshape(-1, order="F")
        return out


@dataclass
class AdmmState:
    """All primal and scaled dual variables plus the convergence trace."""

    mu: np.ndarray                      # global per-element modulus
    zones: list = field(default_factory=list)
    nu: list = field(default_factory=list)        # per zone (ze,)
    q: list = field(default_factory=list)         # per zone (J, ze)
    w: list = field(default_factory=list)         # per zone (J, zn, 3)
    w_hat: list = field(default_factory=list)     # per zone (J, zn, 3) k-space
    lam_c: list = field(default_factory=list)     # per zone (J, 3*zn)
    lam_w: list = field(default_factory=list)     # per zone (J, zn, 3)
    lam_mu: list = field(default_factory=list)    # per zone (ze,)
    iteration: int = 0
    trace: list = field(default_factory=list)
    monitor: list = field(default_factory=list)


def _pcg(matvec, b, x0, diag, tol, maxiter):
    """Jacobi-preconditioned conjugate gradients for Hermitian PD systems."""
    x = x0.astype(np.complex128, copy=True)
    r = b - matvec(x)
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return np.zeros_like(b), 0.0
    z = r / diag
    p = z.copy()
    rz = np.real(np.vdot(r, z))
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * b_norm:
            break
        ap = matvec(p)
        denom = np.real(np.vdot(p, ap))
        if denom <= 0:
            break
        alpha = rz / denom
        x += alpha * p
        r -= alpha * ap
        z = r / diag
        rz_new = np.real(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, float(np.linalg.norm(b - matvec(x)) / b_norm)


def update_local_elasticity(zone: _Zone, state_w, mu_zone, lam_c, lam_mu, params: AdmmParams,
                            omegas, residual_tol=1e-8):
    """Joint zone solve for (nu, Q): regularized direct inversion, Eq-style
    normal equations over the stacked unknown."""
    ops = zone.ops
    j = len(omegas)
    ze = zone.num_elements
    a_c, a_mu, g_p = params.alpha_c, params.alpha_mu, params.gamma_p

    kus, rhs_vecs = [], []
    for jj, omega in enumerate(omegas):
        ku, f = ops.inversion_operator(state_w[jj].reshape(-1), omega)
        kus.append(ku)
        rhs_vecs.append(f - lam_c[jj])

    n_nn = a_c * sum((ku.conj().T @ ku) for ku in kus) + a_mu * sp.identity(ze, format="csr")
    blocks = [[n_nn] + [a_c * (ku.conj().T @ ops.kp) for ku in kus]]
    for jj in range(j):
        row = [blocks[0][1 + jj].conj().T] + [None] * j
        row[1 + jj] = ops.qq
        blocks.append(row)
    nmat = sp.bmat(blocks, format="csc")

    b_nu = a_c * sum(ku.conj().T @ r for ku, r in zip(kus, rhs_vecs)) + a_mu * (mu_zone - lam_mu)
    b = np.concatenate([b_nu] + [a_c * (ops.kp_h @ r) for r in rhs_vecs])

    try:
        lu = spla.splu(nmat, permc_spec="MMD_AT_PLUS_A", options=_SLU_OPTIONS)
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SolverError(f"zone elasticity solve failed: {exc}") from exc
    rel = np.linalg.norm(nmat @ x - b) / max(np.linalg.norm(b), 1e-300)
    if not np.isfinite(rel) or rel > residual_tol:
        raise SolverError(f"zone elasticity normal residual {rel:.2e} exceeds {residual_tol:.0e}")
    nu = x[:ze]
    q = x[ze:].reshape(j, ze)
    return nu, q, kus, rhs_vecs


def _elasticity_objective(zone, kus, rhs_vecs, nu, q, mu_zone, lam_mu, params):
    ops = zone.ops
    acc = 0.0
    for ku, r, qj in zip(kus, rhs_vecs, q):
        acc += 0.5 * params.alpha_c * np.linalg.norm(ku @ nu + ops.kp @ qj - r) ** 2
        acc += 0.5 * params.gamma_p * np.linalg.norm(ops.grad @ qj) ** 2
    acc += 0.5 * params.alpha_mu * np.linalg.norm(nu - mu_zone + lam_mu) ** 2
    return float(acc)


def update_local_displacement(zone: _Zone, nu, q, w, w_hat, lam_c, lam_w, params: AdmmParams,
                              omegas, residual_tol=1e-8, cg_tol=1e-10, cg_maxiter=600):
    """Per-frequency displacement fit: wave-consistency, data fidelity and
    the k-space anchor, solved through Hermitian normal equations."""
    ops = zone.ops
    a_c, rho_w, a_w = params.alpha_c, params.data_weight, params.alpha_w
    new_w = np.empty_like(w)
    wave_mats = []
    for jj, omega in enumerate(omegas):
        a = ops.wave_operator(nu, omega)
        wave_mats.append(a)
        ah = a.conj().T.tocsr()
        const = ops.kp @ q[jj] + lam_c[jj]
        rhs = -a_c * (ah @ const)
        if rho_w:
            rhs = rhs + rho_w * zone.v[jj].reshape(-1)
        if a_w:
            anchor = zone.ifft(w_hat[jj] - lam_w[jj]).reshape(-1)
            rhs = rhs + a_w * anchor
        shift = (rho_w or 0.0) + (a_w or 0.0)
        matvec = lambda x: a_c * (ah @ (a @ x)) + shift * x
        diag = a_c * np.asarray(a.multiply(a.conj()).sum(axis=0)).real.ravel() + shift
        x0 = w[jj].reshape(-1)
        x, rel = _pcg(matvec, rhs, x0, diag, cg_tol, cg_maxiter)
        if rel > residual_tol:
            nmat = (a_c * (ah @ a) + shift * sp.identity(a.shape[0])).tocsc()
            try:
                x = spla.splu(nmat, permc_spec="MMD_AT_PLUS_A", options=_SLU_OPTIONS).solve(rhs)
            except RuntimeError as exc:
                raise SolverError(f"displacement solve failed: {exc}") from exc
            rel = np.linalg.norm(nmat @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if rel > residual_tol:
                raise SolverError(
                    f"displacement normal residual {rel:.2e} exceeds {residual_tol:.0e}"
                )
        new_w[jj] = x.reshape(-1, 3)
    return new_w, wave_mats


def _displacement_objective(zone, wave_mats, q, w, w_hat, lam_c, lam_w, params):
    ops = zone.ops
    acc = 0.0
    for jj, a in enumerate(wave_mats):
        wave = a @ w[jj].reshape(-1) + ops.kp @ q[jj] + lam_c[jj]
        acc += 0.5 * params.alpha_c * np.linalg.norm(wave) ** 2
        acc += 0.5 * params.alpha_w * np.linalg.norm(zone.fft(w[jj]) - w_hat[jj] + lam_w[jj]) ** 2
    acc += 0.5 * params.data_weight * np.linalg.norm(w - zone.v) ** 2
    return float(acc)


def update_kspace(zone: _Zone, w, lam_w, params: AdmmParams):
    """Soft threshold of the shifted spectrum with threshold gamma_u/alpha_x."""
    from .prox import soft_threshold_complex

    thresh = params.gamma_u / params.alpha_x
    out = np.empty_like(w)
    for jj in range(w.shape[0]):
        out[jj] = soft_threshold_complex(zone.fft(w[jj]) + lam_w[jj], thresh)
    return out


def _kspace_objective(zone, w, w_hat, lam_w, params):
    acc = 0.0
    for jj in range(w.shape[0]):
        spec = zone.fft(w[jj])
        acc += 0.5 * params.alpha_x * np.linalg.norm(spec - w_hat[jj] + lam_w[jj]) ** 2
        acc += params.gamma_u * np.abs(w_hat[jj]).sum()
    return float(acc)


def update_duals(zone: _Zone, nu, q, w, w_hat, mu_zone, lam_c, lam_w, lam_mu, omegas,
                 wave_mats=None):
    """Accumulate the three constraint residuals into the scaled duals.

    Returns the updated duals and the squared residual norms they absorbed.
    """
    ops = zone.ops
    wave_sq = kspace_sq = 0.0
    new_lam_c = np.empty_like(lam_c)
    new_lam_w = np.empty_like(lam_w)
    for jj, omega in enumerate(omegas):
        a = wave_mats[jj] if wave_mats is not None else ops.wave_operator(nu, omega)
        r_wave = a @ w[jj].reshape(-1) + ops.kp @ q[jj]
        new_lam_c[jj] = lam_c[jj] + r_wave
        wave_sq += float(np.linalg.norm(r_wave) ** 2)
        r_spec = zone.fft(w[jj]) - w_hat[jj]
        new_lam_w[jj] = lam_w[jj] + r_spec
        kspace_sq += float(np.linalg.norm(r_spec) ** 2)
    r_mu = nu - mu_zone
    new_lam_mu = lam_mu + r_mu
    return new_lam_c, new_lam_w, new_lam_mu, wave_sq, kspace_sq, float(np.linalg.norm(r_mu) ** 2)


def update_global_elasticity(consensus: np.ndarray, egrid_shape, params: AdmmParams,
                             gap_tol=1e-6, max_iters=100):
    """Box-constrained isotropic TV prox of the consensus average, applied to
    the real and imaginary parts separately."""
    from .prox import tv_denoise_box

    if params.gamma_mu is None or params.alpha_mu in (None, 0):
        weight = 0.0
    else:
        weight = params.gamma_mu / params.alpha_mu
    vol = consensus.reshape(egrid_shape, order="F")
    re, _ = tv_denoise_box(vol.real, weight, *params.mu_re_bounds,
                           gap_tol=gap_tol, max_iters=max_iters)
    im, _ = tv_denoise_box(vol.imag, weight, *params.mu_im_bounds,
                           gap_tol=gap_tol, max_iters=max_iters)
    return (re + 1j * im).reshape(-1, order="F")


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class ReconstructionConfig:
    mode: str = "mersa"
    frequency_indices: tuple = None     # default: all for mersa/direct, first for ersa
    zone_mm: float = 21.0
    stride_mm: float = 17.0
    overrides: dict = field(default_factory=dict)
    initial_mu: complex = 3000.0 + 0.0j
    monitor: bool = False
    tv_gap_tol: float = 1e-6
    tv_max_iters: int = 100
    verbose: bool = False


@dataclass
class ReconstructionResult:
    mu: ComplexScalarField                 # node lattice (grid of the data)
    mu_elements: ComplexScalarField        # element lattice
    displacement: list                     # stitched fit per frequency
    pressure: list                         # stitched per-element pressure per frequency
    trace: list
    params: AdmmParams
    converged: bool
    iterations: int
    state: AdmmState = None
    monitor: list = None


def _select_entries(data: MultiFrequencyDataset, config: ReconstructionConfig):
    idx = config.frequency_indices
    if idx is None:
        idx = (0,) if config.mode == "ersa" else tuple(range(len(data)))
    idx = tuple(int(i) for i in idx)
    if config.mode == "ersa" and len(idx) != 1:
        raise ValueError("ersa mode uses exactly one frequency")
    entries = [data.entries[i] for i in idx]
    return MultiFrequencyDataset(entries, data.density)


def run_reconstruction(
    data: MultiFrequencyDataset, mode: str = "mersa", config: ReconstructionConfig = None
) -> ReconstructionResult:
    """Reconstruct the complex shear modulus from displacement data.

    ``mode`` is "mersa" (all selected frequencies jointly), "ersa" (single
    frequency; same code path with J=1) or "direct" (one global linearized
    solve, no iterations).
    """
    config = config or ReconstructionConfig()
    config = replace(config, mode=mode)
    subset = _select_entries(data, config)
    if mode == "direct":
        return _run_direct(subset, config)
    if mode not in ("ersa", "mersa"):
        raise ValueError(f"unknown reconstruction mode {mode!r}")
    return _run_admm(subset, config)


def _log(config, msg):
    if config.verbose:
        print(msg, flush=True)


def _run_admm(data: MultiFrequencyDataset, config: ReconstructionConfig) -> ReconstructionResult:
    grid = data.grid
    density = data.density
    omegas = [e.omega for e in data.entries]
    j = len(omegas)
    stacked = np.stack([e.values for e in data.entries])  # (J, N, 3)

    partition = partition_subzones(grid, config.zone_mm, config.stride_mm)
    params = compute_params(
        data,
        ParamOperators(fft_max_abs=None),
        overrides={k: v for k, v in config.overrides.items() if k in ("gamma_u",)},
    )

    # schedule pieces that only need the measured data
    gdof = DofMap(grid)
    ku_global = []
    for entry in data.entries:
        ku, _ = assemble_inversion_operator(entry.values.reshape(-1), gdof, omega=entry.omega)
        ku_global.append(ku.tocsr())
    kp_global = assemble_pressure_coupling(gdof).tocsr()
    grad_global = forward_difference_gradient(grid.element_grid()).tocsr()
    params = compute_params(
        data,
        ParamOperators(ku_per_freq=ku_global, kp=kp_global, grad=grad_global,
                       fft_max_abs=params.gamma_u / 2.0**-7),
        overrides=config.overrides,
        base=params,
    )
    if params.alpha_mu is None or params.gamma_p is None:
        raise SolverError("weight schedule incomplete after data-side calibration")

    shape_cache = {}
    zones = []
    for box in partition.zones:
        key = box.shape
        if key not in shape_cache:
            shape_cache[key] = _ZoneShapeOps(key, grid.spacing, density,
                                             params.gamma_p, params.alpha_c)
        zones.append(_Zone(box, partition, shape_cache[key], stacked))

    elem_cover = np.zeros(gdof.num_elements, dtype=np.int64)
    for z in zones:
        np.add.at(elem_cover, z.elem_idx, 1)
    if elem_cover.min() < 1:
        raise SolverError("subzone partition leaves elements uncovered")

    state = AdmmState(mu=np.full(gdof.num_elements, complex(config.initial_mu)))
    for z in zones:
        zn, ze = z.num_nodes, z.num_elements
        state.nu.append(np.zeros(ze, dtype=np.complex128))
        state.q.append(np.zeros((j, ze), dtype=np.complex128))
        state.w.append(z.v.copy())
        state.w_hat.append(np.stack([z.fft(z.v[jj]) for jj in range(j)]))
        state.lam_c.append(np.zeros((j, 3 * zn), dtype=np.complex128))
        state.lam_w.append(np.zeros((j, zn, 3), dtype=np.complex128))
        state.lam_mu.append(np.zeros(ze, dtype=np.complex128))
    state.zones = zones

    egrid = grid.element_grid()
    converged = False
    calibrated = params.data_weight is not None and params.gamma_mu is not None

    for it in range(1, params.max_iter + 1):
        state.iteration = it
        t_iter = time.time()
        mu_prev = state.mu.copy()

        # (1) local modulus/pressure inversion per zone
        for zi, z in enumerate(zones):
            mu_zone = state.mu[z.elem_idx]
            if config.monitor:
                kus0, rhs0 = [], []
                for jj, om in enumerate(omegas):
                    ku, f = z.ops.inversion_operator(state.w[zi][jj].reshape(-1), om)
                    kus0.append(ku)
                    rhs0.append(f - state.lam_c[zi][jj])
                before = _elasticity_objective(z, kus0, rhs0, state.nu[zi], state.q[zi],
                                               mu_zone, state.lam_mu[zi], params)
            nu, q, kus, rhs_vecs = update_local_elasticity(
                z, state.w[zi], mu_zone, state.lam_c[zi], state.lam_mu[zi], params, omegas)
            if config.monitor:
                after = _elasticity_objective(z, kus, rhs_vecs, nu, q,
                                              mu_zone, state.lam_mu[zi], params)
                state.monitor.append((it, zi, "elasticity", before, after))
            state.nu[zi] = nu
            state.q[zi] = q

        # (2) consensus average and global TV denoise
        acc = np.zeros(gdof.num_elements, dtype=np.complex128)
        for zi, z in enumerate(zones):
            np.add.at(acc, z.elem_idx, state.nu[zi] + state.lam_mu[zi])
        consensus = acc / elem_cover

        state.mu = update_global_elasticity(consensus, egrid.shape, params,
                                            config.tv_gap_tol, config.tv_max_iters)

        if not calibrated:
            # the remaining schedule entries key off the first global estimate
            from .fem import assemble_stiffness

            mu1 = ComplexScalarField(egrid, state.mu.copy())
            k_mu1 = assemble_stiffness(state.mu, gdof).tocsr()
            m_global = assemble_mass(density, gdof).tocsr()
            wave_ops = [(k_mu1 - om**2 * m_global).tocsr() for om in omegas]
            params = compute_params(
                data,
                ParamOperators(wave_ops=wave_ops, mu1=mu1),
                overrides=config.overrides,
                base=params,
            ).validate()
            calibrated = True
            _log(config, f"  calibrated: alpha_mu={params.alpha_mu:.3e} "
                         f"rho={params.data_weight:.3e} gamma_u={params.gamma_u:.3e} "
                         f"gamma_mu={params.gamma_mu:.3e} gamma_p={params.gamma_p:.3e}")

        # (3) displacement fit and (4) k-space shrinkage per zone
        for zi, z in enumerate(zones):
            if config.monitor:
                a_mats = [z.ops.wave_operator(state.nu[zi], om) for om in omegas]
                before = _displacement_objective(z, a_mats, state.q[zi], state.w[zi],
                                                 state.w_hat[zi], state.lam_c[zi],
                                                 state.lam_w[zi], params)
            w_new, wave_mats = update_local_displacement(
                z, state.nu[zi], state.q[zi], state.w[zi], state.w_hat[zi],
                state.lam_c[zi], state.lam_w[zi], params, omegas)
            if config.monitor:
                after = _displacement_objective(z, wave_mats, state.q[zi], w_new,
                                                state.w_hat[zi], state.lam_c[zi],
                                                state.lam_w[zi], params)
                state.monitor.append((it, zi, "displacement", before, after))
            state.w[zi] = w_new

            if config.monitor:
                before = _kspace_objective(z, state.w[zi], state.w_hat[zi],
                                           state.lam_w[zi], params)
            what_new = update_kspace(z, state.w[zi], state.lam_w[zi], params)
            if config.monitor:
                after = _kspace_objective(z, state.w[zi], what_new,
                                          state.lam_w[zi], params)
                state.monitor.append((it, zi, "kspace", before, after))
            state.w_hat[zi] = what_new
            z._last_wave_mats = wave_mats

        # (5) dual updates
        wave_sq = kspace_sq = cons_sq = 0.0
        for zi, z in enumerate(zones):
            lc, lw, lm, wsq, ksq, csq = update_duals(
                z, state.nu[zi], state.q[zi], state.w[zi], state.w_hat[zi],
                state.mu[z.elem_idx], state.lam_c[zi], state.lam_w[zi],
                state.lam_mu[zi], omegas, wave_mats=z._last_wave_mats)
            state.lam_c[zi], state.lam_w[zi], state.lam_mu[zi] = lc, lw, lm
            wave_sq += wsq
            kspace_sq += ksq
            cons_sq += csq

        d_mu = float(np.abs(state.mu - mu_prev).sum())
        denom = float(np.abs(mu_prev).sum())
        row = dict(
            iter=it,
            d_mu_l1=d_mu,
            wave_residual=float(np.sqrt(wave_sq)),
            consensus_residual=float(np.sqrt(cons_sq)),
            kspace_residual=float(np.sqrt(kspace_sq)),
        )
        state.trace.append(row)
        _log(config, f"iter {it}: d_mu={d_mu:.4e} rel={d_mu/max(denom,1e-300):.2e} "
                     f"wave={row['wave_residual']:.3e} cons={row['consensus_residual']:.3e} "
                     f"({time.time()-t_iter:.1f}s)")
        if not np.isfinite(d_mu):
            raise SolverError(f"non-finite modulus update at iteration {it}")
        if d_mu <= params.tol_mu * denom:
            converged = True
            break

    return _finalize(data, config, params, state, zones, partition, gdof, converged)


def _finalize(data, config, params, state, zones, partition, gdof, converged):
    grid = data.grid
    egrid = grid.element_grid()
    j = len(data.entries)

    node_acc = np.zeros((j, gdof.num_nodes, 3), dtype=np.complex128)
    node_cnt = np.zeros(gdof.num_nodes, dtype=np.int64)
    elem_acc = np.zeros((j, gdof.num_elements), dtype=np.complex128)
    elem_cnt = np.zeros(gdof.num_elements, dtype=np.int64)
    for zi, z in enumerate(zones):
        np.add.at(node_cnt, z.node_idx, 1)
        np.add.at(elem_cnt, z.elem_idx, 1)
        for jj in range(j):
            np.add.at(node_acc[jj], z.node_idx, state.w[zi][jj])
            np.add.at(elem_acc[jj], z.elem_idx, state.q[zi][jj])
    displacement = [
        DisplacementField(grid, node_acc[jj] / node_cnt[:, None], data.entries[jj].frequency)
        for jj in range(j)
    ]
    pressure = [ComplexScalarField(egrid, elem_acc[jj] / elem_cnt) for jj in range(j)]

    mu_nodes = element_to_node_values(state.mu, gdof)
    return ReconstructionResult(
        mu=ComplexScalarField(grid, mu_nodes),
        mu_elements=ComplexScalarField(egrid, state.mu.copy()),
        displacement=displacement,
        pressure=pressure,
        trace=list(state.trace),
        params=params,
        converged=converged,
        iterations=state.iteration,
        state=state,
        monitor=list(state.monitor),
    )


def _run_direct(data: MultiFrequencyDataset, config: ReconstructionConfig) -> ReconstructionResult:
    """Single global linearized solve with ridge and pressure smoothing."""
    grid = data.grid
    gdof = DofMap(grid)
    egrid = grid.element_grid()
    ne = gdof.num_elements
    j = len(data.entries)

    ku_list, f_list = [], []
    for entry in data.entries:
        ku, f1 = assemble_inversion_operator(entry.values.reshape(-1), gdof, omega=entry.omega)
        ku_list.append(ku.tocsr())
        f_list.append(data.density * f1)
    kp = assemble_pressure_coupling(gdof).tocsr()
    grad = forward_difference_gradient(egrid).tocsr()

    params = compute_params(
        data,
        ParamOperators(ku_per_freq=ku_list, kp=kp, grad=grad),
        overrides=config.overrides,
    )
    a_c, a_mu, g_p = params.alpha_c, params.alpha_mu, params.gamma_p

    rows = []
    rhs = []
    sac = np.sqrt(a_c)
    for jj in range(j):
        blocks = [sac * ku_list[jj]] + [None] * j
        blocks[1 + jj] = sac * kp
        rows.append(blocks)
        rhs.append(sac * f_list[jj])
    ridge = [np.sqrt(a_mu) * sp.identity(ne, format="csr")] + [None] * j
    rows.append(ridge)
    rhs.append(np.zeros(ne))
    for jj in range(j):
        smooth = [None] * (1 + j)
        smooth[1 + jj] = np.sqrt(g_p) * grad
        rows.append(smooth)
        rhs.append(np.zeros(grad.shape[0]))
    a_stack = sp.bmat(rows, format="csr")
    b = np.concatenate(rhs).astype(np.complex128)

    result = spla.lsmr(a_stack, b, atol=1e-12, btol=1e-12, maxiter=20000)
    x = result[0]
    normal_rhs = a_stack.conj().T @ b
    normal_res = np.linalg.norm(a_stack.conj().T @ (a_stack @ x) - normal_rhs)
    rel = normal_res / max(np.linalg.norm(normal_rhs), 1e-300)
    if rel > 1e-8:
        raise SolverError(f"direct inversion normal residual {rel:.2e} exceeds 1e-8")

    mu_e = x[:ne]
    p_fields = [ComplexScalarField(egrid, x[ne + jj * ne: ne + (jj + 1) * ne]) for jj in range(j)]
    mu_nodes = element_to_node_values(mu_e, gdof)
    return ReconstructionResult(
        mu=ComplexScalarField(grid, mu_nodes),
        mu_elements=ComplexScalarField(egrid, mu_e),
        displacement=[e.copy() for e in data.entries],
        pressure=p_fields,
        trace=[],
        params=params,
        converged=True,
        iterations=0,
    )

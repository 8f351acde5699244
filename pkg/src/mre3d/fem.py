"""Sparse finite-element operators for the time-harmonic shear wave model.

Displacement is discretized with 8-node trilinear hexahedra whose vertices sit
on the voxel lattice; shear modulus and hydrostatic pressure are constant per
element.  The wave model couples a symmetric-gradient stiffness operator, a
consistent mass operator and a pressure-divergence coupling:

    [K(mu) - omega^2 M] u + Kp p = 0

Reorganizing the stiffness term against the element-wise modulus gives the
linearized inversion operator Ku(u) with Ku(u) mu = K(mu) u and load
f(u) = omega^2 M u, which is the algebraic backbone of every reconstruction
mode in this package.

All element integrals use 2x2x2 Gauss quadrature, which is exact for trilinear
shape functions on axis-aligned boxes with constant coefficients.  Global
numbering is x-fastest lexicographic; assembled operators are deterministic
regardless of element processing order because accumulation happens on a
canonically sorted sparsity pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import ComplexScalarField, DisplacementField, VoxelGrid

# Local corner c = dx + 2*dy + 4*dz of the unit cell.
_CORNERS = np.array(
    [(dx, dy, dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)], dtype=np.int64
)
_GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def _shape_gradients(hx: float, hy: float, hz: float):
    """Trilinear shape values and physical gradients at the 8 Gauss points.

    Returns (vals (8gp, 8node), grads (8gp, 8node, 3), weight_jacobian).
    """
    signs = _CORNERS * 2 - 1
    pts = np.array([(gx, gy, gz) for gz in _GAUSS_1D for gy in _GAUSS_1D for gx in _GAUSS_1D])
    vals = np.empty((8, 8))
    grads = np.empty((8, 8, 3))
    inv_j = np.array([2.0 / hx, 2.0 / hy, 2.0 / hz])
    for g, (xi, eta, zeta) in enumerate(pts):
        fx = (1 + signs[:, 0] * xi) / 2
        fy = (1 + signs[:, 1] * eta) / 2
        fz = (1 + signs[:, 2] * zeta) / 2
        vals[g] = fx * fy * fz
        grads[g, :, 0] = (signs[:, 0] / 2) * fy * fz * inv_j[0]
        grads[g, :, 1] = fx * (signs[:, 1] / 2) * fz * inv_j[1]
        grads[g, :, 2] = fx * fy * (signs[:, 2] / 2) * inv_j[2]
    det_j = hx * hy * hz / 8.0
    return vals, grads, det_j


def element_matrices(hx: float, hy: float, hz: float):
    """Unit-coefficient element operators on an hx*hy*hz box.

    Returns
    -------
    k0 : (24, 24) unit-modulus stiffness, integral of 2 eps(u):eps(w)
    m0 : (24, 24) unit-density consistent vector mass
    kp0 : (24,) pressure column, -integral of div(w) per displacement dof
    volume : element volume

    Local dof layout is 3*corner + component.
    """
    vals, grads, det_j = _shape_gradients(hx, hy, hz)
    k0 = np.zeros((24, 24))
    m0 = np.zeros((24, 24))
    kp0 = np.zeros(24)
    d_mat = np.diag([2.0, 2.0, 2.0, 1.0, 1.0, 1.0])
    for g in range(8):
        b = np.zeros((6, 24))
        for a in range(8):
            gx, gy, gz = grads[g, a]
            c = 3 * a
            b[0, c] = gx
            b[1, c + 1] = gy
            b[2, c + 2] = gz
            b[3, c] = gy
            b[3, c + 1] = gx
            b[4, c + 1] = gz
            b[4, c + 2] = gy
            b[5, c] = gz
            b[5, c + 2] = gx
        k0 += det_j * (b.T @ d_mat @ b)
        n_vec = np.zeros((3, 24))
        for a in range(8):
            for c in range(3):
                n_vec[c, 3 * a + c] = vals[g, a]
        m0 += det_j * (n_vec.T @ n_vec)
        for a in range(8):
            for c in range(3):
                kp0[3 * a + c] -= det_j * grads[g, a, c]
    return k0, m0, kp0, hx * hy * hz


@dataclass
class DofMap:
    """Index bookkeeping between the voxel lattice and FEM degrees of freedom.

    Nodes coincide with voxel centers (3 displacement dofs each, dof index
    3*node + component); elements are the (nx-1)(ny-1)(nz-1) cells spanned
    between adjacent nodes, each carrying one modulus dof and one pressure dof.
    """

    grid: VoxelGrid

    def __post_init__(self):
        g = self.grid
        self.num_nodes = g.num_voxels
        self.num_displacement_dofs = 3 * self.num_nodes
        self.enx, self.eny, self.enz = g.nx - 1, g.ny - 1, g.nz - 1
        self.num_elements = self.enx * self.eny * self.enz
        self.k0, self.m0, self.kp0, self.element_volume = element_matrices(g.hx, g.hy, g.hz)

        ei, ej, ek = np.meshgrid(
            np.arange(self.enx), np.arange(self.eny), np.arange(self.enz), indexing="ij"
        )
        base = (
            ei.reshape(-1, order="F")
            + g.nx * (ej.reshape(-1, order="F") + g.ny * ek.reshape(-1, order="F"))
        )
        offs = _CORNERS[:, 0] + g.nx * (_CORNERS[:, 1] + g.ny * _CORNERS[:, 2])
        self.element_nodes = base[:, None] + offs[None, :]
        dofs = 3 * self.element_nodes
        self.element_dofs = (dofs[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 24)
        self._pattern = None
        self._mass_cache = {}

    # -- cached sparsity pattern for stiffness-shaped operators ---------------

    def _stiffness_pattern(self):
        """Canonical CSR pattern covering all element 24x24 blocks.

        Returns (indptr, indices, entry_to_pos) where entry_to_pos maps the
        (element, local row, local col) entries, flattened in natural order,
        to positions in the CSR data array.
        """
        if self._pattern is None:
            ed = self.element_dofs
            rows = np.repeat(ed, 24, axis=1).ravel()
            cols = np.tile(ed, (1, 24)).ravel()
            order = np.lexsort((cols, rows))
            r_s = rows[order]
            c_s = cols[order]
            new = np.empty(r_s.size, dtype=bool)
            new[0] = True
            new[1:] = (r_s[1:] != r_s[:-1]) | (c_s[1:] != c_s[:-1])
            upos = np.cumsum(new) - 1
            entry_to_pos = np.empty(r_s.size, dtype=np.int64)
            entry_to_pos[order] = upos
            indices = c_s[new].astype(np.int32)
            counts = np.zeros(self.num_displacement_dofs + 1, dtype=np.int64)
            np.add.at(counts, r_s[new] + 1, 1)
            indptr = np.cumsum(counts)
            self._pattern = (indptr, indices, entry_to_pos)
        return self._pattern

    def assemble_element_blocks(self, per_element_scale: np.ndarray, block: np.ndarray) -> sp.csr_matrix:
        """Assemble sum_e scale_e * block scattered to each element's dofs."""
        indptr, indices, entry_to_pos = self._stiffness_pattern()
        nnz = indices.size
        data = np.zeros(nnz, dtype=np.complex128)
        flat_block = block.reshape(-1)
        chunk = 8192
        for lo in range(0, self.num_elements, chunk):
            hi = min(lo + chunk, self.num_elements)
            vals = per_element_scale[lo:hi, None] * flat_block[None, :]
            np.add.at(data, entry_to_pos[lo * 576 : hi * 576], vals.ravel())
        n = self.num_displacement_dofs
        return sp.csr_matrix((data, indices, indptr), shape=(n, n))

    def assemble_varying_blocks(self, per_element_blocks: np.ndarray) -> sp.csr_matrix:
        """Assemble with a distinct 24x24 block per element (shape (NE, 24, 24))."""
        indptr, indices, entry_to_pos = self._stiffness_pattern()
        data = np.zeros(indices.size, dtype=np.complex128)
        np.add.at(data, entry_to_pos, per_element_blocks.reshape(-1))
        n = self.num_displacement_dofs
        return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def as_element_values(mu, dof: DofMap) -> np.ndarray:
    """Coerce a modulus input to one complex value per element.

    Accepts a plain array of length num_elements, a scalar field on the
    element lattice, or a per-voxel scalar field (converted by averaging the
    8 vertex values of each element).
    """
    if isinstance(mu, ComplexScalarField):
        if mu.grid.shape == (dof.enx, dof.eny, dof.enz):
            return mu.values
        if mu.grid.same_lattice(dof.grid):
            return node_to_element_values(mu.values, dof)
        raise ValueError("modulus field grid matches neither the node nor element lattice")
    arr = np.asarray(mu, dtype=np.complex128).reshape(-1)
    if arr.size == dof.num_elements:
        return arr
    if arr.size == dof.num_nodes:
        return node_to_element_values(arr, dof)
    raise ValueError(f"cannot map {arr.size} modulus values onto {dof.num_elements} elements")


def node_to_element_values(node_values: np.ndarray, dof: DofMap) -> np.ndarray:
    """Per-element value as the mean of the 8 vertex (voxel) values."""
    return np.asarray(node_values).reshape(-1)[dof.element_nodes].mean(axis=1)


def element_to_node_values(element_values: np.ndarray, dof: DofMap) -> np.ndarray:
    """Per-node value as the mean over incident elements (1 to 8 of them)."""
    acc = np.zeros(dof.num_nodes, dtype=np.complex128)
    cnt = np.zeros(dof.num_nodes, dtype=np.int64)
    vals = np.asarray(element_values).reshape(-1)
    for corner in range(8):
        nodes = dof.element_nodes[:, corner]
        np.add.at(acc, nodes, vals)
        np.add.at(cnt, nodes, 1)
    return acc / cnt


def assemble_stiffness(mu, dof: DofMap) -> sp.csr_matrix:
    """Stiffness operator K(mu) of the symmetric-gradient form, per-element mu."""
    mu_e = as_element_values(mu, dof)
    if np.any(mu_e.real <= 0):
        raise ValueError("stiffness assembly requires Re(mu) > 0 in every element")
    return dof.assemble_element_blocks(mu_e, dof.k0)


def assemble_mass(rho: float, dof: DofMap) -> sp.csr_matrix:
    """Consistent mass operator M(rho); symmetric positive definite."""
    if not rho > 0:
        raise ValueError(f"density must be positive, got {rho!r}")
    key = float(rho)
    if key not in dof._mass_cache:
        scale = np.full(dof.num_elements, rho, dtype=np.complex128)
        dof._mass_cache[key] = dof.assemble_element_blocks(scale, dof.m0)
    return dof._mass_cache[key]


def assemble_pressure_coupling(dof: DofMap) -> sp.csr_matrix:
    """Coupling Kp mapping element-constant pressure to nodal forces."""
    rows = dof.element_dofs.ravel()
    cols = np.repeat(np.arange(dof.num_elements), 24)
    data = np.broadcast_to(dof.kp0, (dof.num_elements, 24)).ravel()
    mat = sp.coo_matrix(
        (data.astype(np.complex128), (rows, cols)),
        shape=(dof.num_displacement_dofs, dof.num_elements),
    )
    return mat.tocsr()


def assemble_inversion_operator(u, dof: DofMap, omega: float = None):
    """Linearized operator Ku(u) and load f(u) = omega^2 M u.

    ``u`` may be a DisplacementField (omega taken from it) or a flat dof
    vector with ``omega`` given.  Ku has one column per element modulus dof
    and satisfies Ku(u) mu = K(mu) u for every piecewise-constant mu.
    """
    if isinstance(u, DisplacementField):
        omega = u.omega
        uvec = u.values.reshape(-1)
    else:
        uvec = np.asarray(u, dtype=np.complex128).reshape(-1)
        if omega is None:
            raise ValueError("omega is required when u is a plain vector")
    if uvec.size != dof.num_displacement_dofs:
        raise ValueError("displacement vector does not match dof map")
    u_loc = uvec[dof.element_dofs]
    cols_data = u_loc @ dof.k0.T
    rows = dof.element_dofs.ravel()
    cols = np.repeat(np.arange(dof.num_elements), 24)
    k_u = sp.coo_matrix(
        (cols_data.ravel(), (rows, cols)),
        shape=(dof.num_displacement_dofs, dof.num_elements),
    ).tocsr()
    mass = assemble_mass(1.0, dof)
    f = (omega**2) * (mass @ uvec)
    return k_u, f


def forward_difference_gradient(grid: VoxelGrid) -> sp.csr_matrix:
    """Forward-difference gradient over a lattice, stacked per axis.

    One row per interior adjacent pair and axis, scaled by the physical
    spacing.  Used to smooth per-element pressure and to normalize the
    pressure regularization weight.
    """
    idx = np.arange(grid.num_voxels).reshape(grid.shape, order="F")
    blocks = []
    for axis, h in enumerate(grid.spacing):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(0, -1)
        sl_hi[axis] = slice(1, None)
        a = idx[tuple(sl_lo)].ravel(order="F")
        b = idx[tuple(sl_hi)].ravel(order="F")
        rows = np.arange(a.size)
        data = np.concatenate([-np.ones(a.size), np.ones(b.size)]) / h
        mat = sp.coo_matrix(
            (data, (np.concatenate([rows, rows]), np.concatenate([a, b]))),
            shape=(a.size, grid.num_voxels),
        )
        blocks.append(mat)
    return sp.vstack(blocks).tocsr()


@dataclass
class MultiFrequencyBlocks:
    """Blocked operators coupling J frequencies of one lattice.

    k_mu and k_p repeat the single-frequency operators per block; the mass
    block scales each copy by the squared angular frequency; k_u and f stack
    the per-frequency linearized operators and loads vertically.
    """

    omegas: np.ndarray
    k_mu: sp.spmatrix = None
    k_p: sp.spmatrix = None
    mass: sp.spmatrix = None
    k_u: sp.spmatrix = None
    f: np.ndarray = None


def build_multifrequency_blocks(
    omegas,
    k_mu: sp.spmatrix = None,
    k_p: sp.spmatrix = None,
    mass: sp.spmatrix = None,
    k_u_per_freq=None,
    f_per_freq=None,
) -> MultiFrequencyBlocks:
    """Assemble the J-frequency block operators from single-frequency parts."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    j = omegas.size
    if j < 1:
        raise ValueError("need at least one frequency")
    out = MultiFrequencyBlocks(omegas=omegas)
    eye = sp.identity(j, format="csr")
    if k_mu is not None:
        out.k_mu = sp.kron(eye, k_mu, format="csr")
    if k_p is not None:
        out.k_p = sp.kron(eye, k_p, format="csr")
    if mass is not None:
        out.mass = sp.kron(sp.diags(omegas**2), mass, format="csr")
    if k_u_per_freq is not None:
        mats = list(k_u_per_freq)
        if len(mats) != j:
            raise ValueError(f"expected {j} per-frequency operators, got {len(mats)}")
        ncols = {m.shape[1] for m in mats}
        if len(ncols) != 1:
            raise ValueError("per-frequency operators disagree on column count")
        out.k_u = sp.vstack(mats, format="csr")
    if f_per_freq is not None:
        vecs = [np.asarray(v).reshape(-1) for v in f_per_freq]
        if len(vecs) != j:
            raise ValueError(f"expected {j} per-frequency loads, got {len(vecs)}")
        out.f = np.concatenate(vecs)
    return out


def dump_triplets(mat: sp.spmatrix, path):
    """Debug dump of a sparse operator as 'row col re im' lines."""
    coo = mat.tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")

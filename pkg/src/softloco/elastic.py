"""Tetrahedral FEM elasticity: stable Neo-Hookean energy, forces, mass,
rest-shape stiffness and Rayleigh damping.

The energy is psi = mu/2 (I_C - 3) - mu (J - 1) + lambda/2 (J - 1)^2 with
I_C = tr(F^T F) and J = det F.  It stays finite for inverted elements
(J <= 0), so no SVD clamping is needed anywhere in the force path.

The per-element force primitive is the analytic first Piola stress
P(F) = mu F + (lambda (J - 1) - mu) cof(F), assembled from a handful of
batched matrix nodes; element Hessian blocks are obtained by imaginary-
perturbing that same force function twelve times rather than by deriving
them by hand.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from . import clinalg as L
from . import tape as T
from .tape import Tape


@dataclass
class MaterialParams:
    """Lame constants (Pa), Rayleigh coefficients, density (kg/m^3)."""

    mu: float = 1e4
    lam: float = 1e4
    alpha: float = 0.0
    beta: float = 0.0
    rho: float = 1000.0

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0 or self.rho <= 0:
            raise ValueError("require mu > 0, lam >= 0, rho > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("Rayleigh coefficients must be non-negative")


@dataclass
class SimState:
    """Dynamic state of the body: positions, velocities, frame index."""

    x: np.ndarray
    v: np.ndarray
    t: int = 0

    def copy(self):
        return SimState(self.x.copy(), self.v.copy(), self.t)


def gather_elements(x, tets):
    """(N, 3) positions -> (T, 4, 3) per-element vertex positions."""
    return T.gather(x, tets) if isinstance(x, T.Var) else x[tets]


def deformation_gradients(x_elem, dm_inv):
    """F = Ds(x) Dm^{-1} for every element; x_elem is (T, 4, 3)."""
    d1 = x_elem[..., 1, :] - x_elem[..., 0, :]
    d2 = x_elem[..., 2, :] - x_elem[..., 0, :]
    d3 = x_elem[..., 3, :] - x_elem[..., 0, :]
    ds = T.stack([d1, d2, d3], axis=-1)
    return L.matmul(ds, dm_inv)


def neo_hookean_energy(f, mu, lam):
    """Energy density per element from deformation gradients (T, 3, 3)."""
    ic = L.trace_gram(f)
    j = L.det3(f)
    jm1 = j - 1.0
    return 0.5 * mu * (ic - 3.0) - mu * jm1 + 0.5 * lam * (jm1 * jm1)


def total_energy(x, mesh, mat, elems=None):
    """Sum of V_e psi_e, optionally over an element subset."""
    xe = gather_elements(x, mesh.tets if elems is None else mesh.tets[elems])
    dm_inv = mesh.dm_inv if elems is None else mesh.dm_inv[elems]
    vols = mesh.rest_volumes if elems is None else mesh.rest_volumes[elems]
    f = deformation_gradients(xe, dm_inv)
    return T.vsum(neo_hookean_energy(f, mat.mu, mat.lam) * vols)


def first_piola(f, mu, lam):
    """P(F) = mu F + (lambda (J - 1) - mu) cof(F)."""
    j = L.det3(f)
    coef = lam * (j - 1.0) - mu
    cof = L.cof3(f)
    return mu * f + T.reshape(coef, np.shape(T.real_of(coef)) + (1, 1)) * cof


def element_elastic_forces(x_elem, dm_inv, vols, mu, lam):
    """Per-element nodal forces (T, 4, 3): minus the energy gradient."""
    f = deformation_gradients(x_elem, dm_inv)
    p = first_piola(f, mu, lam)
    # dE/dDs = V P Dm^{-T}; columns are forces on vertices 1..3 (negated)
    h = L.matmul(p, T.swap_last2(dm_inv)) * (-vols[:, None, None])
    f1 = h[..., :, 0]
    f2 = h[..., :, 1]
    f3 = h[..., :, 2]
    f0 = -(f1 + f2 + f3)
    return T.stack([f0, f1, f2, f3], axis=-2)


def elastic_forces(x, mesh, mat):
    """Assembled internal forces (N, 3) on the tape."""
    xe = gather_elements(x, mesh.tets)
    fe = element_elastic_forces(xe, mesh.dm_inv, mesh.rest_volumes,
                                mat.mu, mat.lam)
    return T.scatter_add((mesh.num_vertices, 3), mesh.tets, fe)


def lumped_masses(mesh, rho):
    """Per-vertex masses (N,): a quarter of each incident element's mass."""
    m = np.zeros(mesh.num_vertices)
    np.add.at(m, mesh.tets, (rho * mesh.rest_volumes / 4.0)[:, None])
    return m


def element_hessian_blocks(x_elem_real, dm_inv, vols, mu, lam, h=1e-20):
    """12x12 stiffness blocks -d f_e / d x_e by imaginary perturbation.

    All twelve local perturbations run as one batched complex evaluation
    of the analytic element force (leading axis = perturbed dof).
    """
    tcount = x_elem_real.shape[0]
    base = np.broadcast_to(x_elem_real, (12,) + x_elem_real.shape)
    base = base.astype(np.complex128)
    for dof in range(12):
        base[dof, :, dof // 3, dof % 3] += 1j * h
    tp = Tape(recording=False)
    fe = element_elastic_forces(T.Var(tp, -1, base), dm_inv, vols, mu, lam)
    return -fe.value.imag.reshape(12, tcount, 12).transpose(1, 2, 0) / h


def assemble_stiffness(blocks, tets, num_vertices):
    """Scatter (T, 12, 12) blocks into a sparse symmetric 3N x 3N matrix."""
    tcount = tets.shape[0]
    dof = (3 * tets[:, :, None] + np.arange(3)[None, None, :]).reshape(tcount, 12)
    rows = np.repeat(dof, 12, axis=1).ravel()
    cols = np.tile(dof, (1, 12)).ravel()
    k = sparse.coo_matrix((blocks.ravel(), (rows, cols)),
                          shape=(3 * num_vertices, 3 * num_vertices)).tocsr()
    return (k + k.T) * 0.5


def rest_stiffness(mesh, mat):
    """K0 = d^2 E / d x^2 at the rest pose, symmetrized sparse."""
    xe = mesh.ref_positions[mesh.tets]
    blocks = element_hessian_blocks(xe, mesh.dm_inv, mesh.rest_volumes,
                                    mat.mu, mat.lam)
    return assemble_stiffness(blocks, mesh.tets, mesh.num_vertices)


def damping_forces(v_next, masses, k0, alpha, beta):
    """Rayleigh damping -(alpha M + beta K0) v_{t+1}, resisting motion."""
    out = -alpha * (masses[:, None] * v_next)
    if beta != 0.0:
        n = masses.shape[0]
        kv = T.symm_spmatvec(k0, T.reshape(v_next, (3 * n,)))
        out = out - beta * T.reshape(kv, (n, 3))
    return out

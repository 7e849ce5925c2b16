"""Polyline muscle fibers and activation-driven nodal forces.

Each fiber is a polygonal curve whose segments act as independent
contract/extend actuators.  A segment j influences element i with a
Gaussian weight of their geodesic distance, w_ij = exp(-g_ij^2 / c^2),
where g is measured along the tet adjacency graph through barycenters and
precomputed once on the rest shape.

At evaluation time the activations assemble a reference stress
sum_j w_ij (d_j (x) d_j) a_j per element, which is rotated into the
deformed frame by the polar factor of the deformation gradient and
projected onto area-weighted deformed face normals, split evenly to face
vertices.  The whole map is linear in the activations at fixed pose.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import dijkstra

from . import clinalg as L
from . import tape as T
from .elastic import deformation_gradients
from .errors import ConfigError

# matches the outward-face convention of the mesh module
_TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


@dataclass
class MuscleFiber:
    """Ordered reference points; consecutive pairs are segments."""

    points: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 2:
            raise ConfigError("a fiber needs at least two 3D points")

    @property
    def num_segments(self):
        return len(self.points) - 1

    def directions(self):
        d = np.diff(self.points, axis=0)
        lengths = np.linalg.norm(d, axis=1)
        if np.any(lengths == 0.0):
            raise ConfigError(f"fiber {self.name!r} has a zero-length segment")
        return d / lengths[:, None]

    def midpoints(self):
        return 0.5 * (self.points[:-1] + self.points[1:])


@dataclass
class WeightTable:
    """Precomputed per-element activation geometry.

    ``weights`` is (T, M) with entries below the cutoff zeroed;
    ``stress_map`` is the constant (9T, M) matrix mapping activations to
    flattened per-element reference stresses.
    """

    weights: np.ndarray
    directions: np.ndarray
    width: float
    segment_names: list = field(default_factory=list)
    cutoff: float = 1e-4

    def __post_init__(self):
        t, m = self.weights.shape
        dyads = self.directions[:, :, None] * self.directions[:, None, :]
        full = self.weights[:, :, None, None] * dyads[None, :, :, :]
        self.stress_map = np.ascontiguousarray(
            full.transpose(0, 2, 3, 1).reshape(9 * t, m))
        self.active_elements = np.nonzero(np.any(self.weights > 0.0, axis=1))[0]

    @property
    def num_segments(self):
        return self.weights.shape[1]


def precompute_weights(mesh, fibers, width, cutoff=1e-4):
    """Gaussian geodesic influence weights of every segment on every element."""
    if width <= 0:
        raise ConfigError("gaussian width must be positive")
    graph = mesh.adjacency_graph()
    segments = []
    names = []
    for fi, fiber in enumerate(fibers):
        dirs = fiber.directions()
        for si, mid in enumerate(fiber.midpoints()):
            tet = mesh.containing_tet(mid)
            if tet < 0:
                label = fiber.name or f"fiber {fi}"
                raise ConfigError(
                    f"{label}, segment {si}: midpoint {mid.tolist()} lies outside the mesh")
            segments.append((tet, dirs[si]))
            names.append(f"{fiber.name or f'fiber{fi}'}/seg{si}")
    m = len(segments)
    weights = np.zeros((mesh.num_tets, m))
    directions = np.zeros((m, 3))
    sources = [s[0] for s in segments]
    dist = dijkstra(graph, indices=sources, directed=False)
    dist = np.atleast_2d(dist)
    for j, (tet, d) in enumerate(segments):
        w = np.exp(-(dist[j] ** 2) / (width ** 2))
        w[~np.isfinite(dist[j])] = 0.0
        w[w < cutoff] = 0.0
        weights[:, j] = w
        directions[j] = d
    return WeightTable(weights, directions, width, names, cutoff)


def segment_stress(direction, activation):
    """Rank-one reference stress (d (x) d) a for one segment."""
    d = np.asarray(direction, dtype=float)
    return activation * np.outer(d, d)


def reference_stresses(table, a, elems=None):
    """Per-element reference stress sum_j w_ij E_j a_j, shape (T, 3, 3)."""
    smap = table.stress_map
    t = table.weights.shape[0]
    if elems is not None:
        smap = smap.reshape(t, 9, -1)[elems].reshape(-1, smap.shape[1])
        t = len(elems)
    flat = L.matvec(smap, a)
    return T.reshape(flat, (t, 3, 3))


def element_rotation(f):
    """Rotation factor of F = R S (reflection-safe polar decomposition)."""
    return L.polar3(f)


def element_muscle_forces(x_elem, dm_inv, stresses):
    """Per-element nodal muscle forces (Ta, 4, 3).

    stress in deformed coordinates: sigma = R E R^T; traction sigma n on
    each deformed area-weighted outward face normal, split evenly (1/3)
    to the face's vertices.
    """
    f = deformation_gradients(x_elem, dm_inv)
    r = element_rotation(f)
    sigma = L.matmul(L.matmul(r, stresses), T.swap_last2(r))
    verts = [x_elem[..., i, :] for i in range(4)]
    accum = [None, None, None, None]
    for (ia, ib, ic) in _TET_FACES:
        e1 = verts[ib] - verts[ia]
        e2 = verts[ic] - verts[ia]
        normal = L.cross3(e1, e2) * 0.5
        traction = L.matvec(sigma, normal) * (1.0 / 3.0)
        for v in (ia, ib, ic):
            accum[v] = traction if accum[v] is None else accum[v] + traction
    return T.stack(accum, axis=-2)


def muscle_forces(x, a, mesh, table):
    """Assembled nodal forces (N, 3) = A(x) a, evaluated on the tape."""
    elems = table.active_elements
    if len(elems) == 0:
        return a.tape.constant(np.zeros((mesh.num_vertices, 3)))
    stresses = reference_stresses(table, a, elems=elems)
    xe = x[mesh.tets[elems]]
    fe = element_muscle_forces(xe, mesh.dm_inv[elems], stresses)
    return T.scatter_add((mesh.num_vertices, 3), mesh.tets[elems], fe)


def activation_matrix(x_real, mesh, table):
    """Dense pose-dependent map A(x): activations -> nodal forces."""
    m = table.num_segments
    n = mesh.num_vertices
    a_mat = np.zeros((3 * n, m))
    tp = T.Tape(recording=False)
    xv = T.Var(tp, -1, np.asarray(x_real, dtype=float))
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1.0
        fk = muscle_forces(xv, T.Var(tp, -1, e), mesh, table)
        a_mat[:, k] = T.value_of(fk).ravel()
    return a_mat


def muscle_hessian_blocks(x_elem_real, dm_inv, stresses_real, h=1e-20):
    """12x12 blocks -d f_m / d x_e at fixed activations, via CSFD.

    Batched like the elastic blocks: one evaluation with the perturbed
    dof as a leading axis (the polar decomposition broadcasts over it).
    """
    tcount = x_elem_real.shape[0]
    base = np.broadcast_to(x_elem_real, (12,) + x_elem_real.shape)
    base = base.astype(np.complex128)
    for dof in range(12):
        base[dof, :, dof // 3, dof % 3] += 1j * h
    tp = T.Tape(recording=False)
    sv = T.Var(tp, -1, stresses_real)
    fe = element_muscle_forces(T.Var(tp, -1, base), dm_inv, sv)
    return -fe.value.imag.reshape(12, tcount, 12).transpose(1, 2, 0) / h

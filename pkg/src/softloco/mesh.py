"""Tetrahedral meshes: loading, generation, surface extraction, adjacency."""

import numpy as np
import scipy.sparse as sparse

from .errors import ConfigError

# outward-oriented faces of a positively oriented tet (v0, v1, v2, v3)
_TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


class TetMesh:
    """Reference geometry plus the per-element precomputations.

    ``ref_positions`` is (N, 3) in meters, ``tets`` is (T, 4) vertex ids
    with positive orientation (fixed up at construction).  Surface
    triangles are outward oriented; ``surface_vertices`` are the ids
    appearing on the boundary.
    """

    def __init__(self, ref_positions, tets):
        self.ref_positions = np.asarray(ref_positions, dtype=float)
        tets = np.asarray(tets, dtype=int)
        if self.ref_positions.ndim != 2 or self.ref_positions.shape[1] != 3:
            raise ConfigError("ref_positions must be (N, 3)")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise ConfigError("tets must be (T, 4)")
        # enforce positive orientation by swapping two vertices if needed
        d = self.ref_positions[tets]
        vol6 = np.linalg.det(d[:, 1:] - d[:, :1])
        flip = vol6 < 0
        tets = tets.copy()
        tets[flip, 0], tets[flip, 1] = tets[flip, 1], tets[flip, 0].copy()
        self.tets = tets

        d = self.ref_positions[self.tets]
        dm = np.swapaxes(d[:, 1:] - d[:, :1], -1, -2)  # columns are edges
        vol6 = np.linalg.det(dm)
        if np.any(vol6 <= 0):
            raise ConfigError("degenerate tetrahedra in mesh")
        self.rest_volumes = vol6 / 6.0
        self.dm_inv = np.linalg.inv(dm)
        self.surface_tris = self._extract_surface()
        self.surface_vertices = np.unique(self.surface_tris)

    @property
    def num_vertices(self):
        return self.ref_positions.shape[0]

    @property
    def num_tets(self):
        return self.tets.shape[0]

    def _extract_surface(self):
        seen = {}
        for t, tet in enumerate(self.tets):
            for f in _TET_FACES:
                tri = (tet[f[0]], tet[f[1]], tet[f[2]])
                key = tuple(sorted(tri))
                if key in seen:
                    seen[key] = None
                else:
                    seen[key] = tri
        tris = [tri for tri in seen.values() if tri is not None]
        return np.array(sorted(tris), dtype=int).reshape(-1, 3)

    def barycenters(self):
        return self.ref_positions[self.tets].mean(axis=1)

    def adjacency_graph(self):
        """Sparse graph between face-sharing tets, weighted by barycenter distance."""
        faces = {}
        for t, tet in enumerate(self.tets):
            for f in _TET_FACES:
                key = tuple(sorted((tet[f[0]], tet[f[1]], tet[f[2]])))
                faces.setdefault(key, []).append(t)
        bc = self.barycenters()
        rows, cols, vals = [], [], []
        for members in faces.values():
            if len(members) == 2:
                a, b = members
                w = float(np.linalg.norm(bc[a] - bc[b]))
                rows += [a, b]
                cols += [b, a]
                vals += [w, w]
        n = self.num_tets
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def containing_tet(self, point, tol=1e-9):
        """Index of a tet containing the point, or -1."""
        p = np.asarray(point, dtype=float)
        d = self.ref_positions[self.tets]
        # barycentric coordinates from the precomputed inverse shape matrix
        lam = np.einsum("tij,tj->ti", self.dm_inv, p - d[:, 0])
        lam0 = 1.0 - lam.sum(axis=1)
        bary = np.column_stack([lam0, lam])
        inside = np.all(bary >= -tol, axis=1)
        hits = np.nonzero(inside)[0]
        return int(hits[0]) if hits.size else -1


def load_mesh(path):
    """Plain-text mesh: header "N T", N lines "x y z", T lines "i j k l"."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ConfigError(f"mesh file {path}: missing header")
    n, t = int(tokens[0]), int(tokens[1])
    need = 2 + 3 * n + 4 * t
    if len(tokens) != need:
        raise ConfigError(
            f"mesh file {path}: expected {need} numbers, found {len(tokens)}")
    pos = np.array(tokens[2:2 + 3 * n], dtype=float).reshape(n, 3)
    tets = np.array(tokens[2 + 3 * n:], dtype=int).reshape(t, 4)
    if tets.min() < 0 or tets.max() >= n:
        raise ConfigError(f"mesh file {path}: vertex index out of range")
    return TetMesh(pos, tets)


def save_mesh(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.num_vertices} {mesh.num_tets}\n")
        for p in mesh.ref_positions:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.tets:
            fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")


def single_tet(edge=0.2, base_height=0.1):
    """One regular tetrahedron, base triangle parallel to the ground."""
    a = edge
    pos = np.array([
        [0.0, 0.0, 0.0],
        [a, 0.0, 0.0],
        [0.5 * a, np.sqrt(3.0) / 2.0 * a, 0.0],
        [0.5 * a, np.sqrt(3.0) / 6.0 * a, np.sqrt(2.0 / 3.0) * a],
    ])
    pos[:, 0] -= 0.5 * a
    pos[:, 1] -= np.sqrt(3.0) / 6.0 * a
    pos[:, 2] += base_height
    return TetMesh(pos, np.array([[0, 1, 2, 3]]))


# Kuhn split of a hexahedral cell into six conforming tets, using the
# cell's local corner numbering (x + 2 y + 4 z order).
_KUHN = ((0, 1, 3, 7), (0, 1, 7, 5), (0, 5, 7, 4),
         (0, 3, 2, 7), (0, 2, 6, 7), (0, 6, 4, 7))


def bar(cells=(2, 2, 3), cell_size=0.05, base_height=0.0):
    """Axis-aligned bar of hexahedral cells split into tets."""
    nx, ny, nz = cells
    xs = np.arange(nx + 1) * cell_size
    ys = np.arange(ny + 1) * cell_size
    zs = np.arange(nz + 1) * cell_size + base_height
    grid = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    pos = grid.reshape(-1, 3)
    pos[:, 0] -= nx * cell_size / 2.0
    pos[:, 1] -= ny * cell_size / 2.0

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                # local corner c holds bit 0 = x, bit 1 = y, bit 2 = z
                local = [vid(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))
                         for c in range(8)]
                for t in _KUHN:
                    tets.append([local[t[0]], local[t[1]], local[t[2]], local[t[3]]])
    return TetMesh(pos, np.array(tets))

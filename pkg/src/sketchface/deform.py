"""Handle-based Laplacian mesh deformation with a prefactorized normal system.

The system stacks Laplacian rows (preserving the differential coordinates of
the rest shape) with weighted soft positional rows for the handle vertices.
Vertices outside the region of interest are hard constraints: they are
eliminated from the system and returned untouched.  The factorization of
A^T A is computed once; every edit only refreshes the right-hand side.
"""

import hashlib

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class DeformError(ValueError):
    pass


def _adjacency(n, triangles):
    nbrs = [set() for _ in range(n)]
    for a, b, c in triangles:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return nbrs


def _laplacian(mesh, weighting):
    """Row-normalized graph Laplacian (n x n, rows sum to zero)."""
    n = mesh.n
    if weighting == "uniform":
        nbrs = _adjacency(n, mesh.triangles)
        rows, cols, vals = [], [], []
        for i, ns in enumerate(nbrs):
            if not ns:
                continue
            w = 1.0 / len(ns)
            rows.append(i); cols.append(i); vals.append(1.0)
            for j in ns:
                rows.append(i); cols.append(j); vals.append(-w)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    if weighting == "cotangent":
        return _cotangent_laplacian(mesh)
    raise DeformError(f"unknown weighting {weighting!r}")


def _cotangent_laplacian(mesh):
    n = mesh.n
    v = mesh.vertices
    w = sp.lil_matrix((n, n))
    for a, b, c in mesh.triangles:
        for (i, j, k) in ((a, b, c), (b, c, a), (c, a, b)):
            # cotangent at k weights edge (i, j)
            e1 = v[i] - v[k]
            e2 = v[j] - v[k]
            cross = np.linalg.norm(np.cross(e1, e2))
            cot = float(np.dot(e1, e2)) / max(cross, 1e-12)
            w[i, j] += 0.5 * cot
            w[j, i] += 0.5 * cot
    w = w.tocsr()
    deg = np.asarray(w.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0
    d_inv = sp.diags(1.0 / deg)
    return sp.eye(n, format="csr") - d_inv @ w


class DeformSolver:
    """Immutable prefactorized solver; safe to share for concurrent solves."""

    def __init__(self, mesh, handles, handle_weight=10.0, weighting="uniform", roi=None):
        handles = np.asarray(handles, dtype=np.int64).ravel()
        if handles.size == 0:
            raise DeformError("no constraints: handle set is empty")
        if np.unique(handles).size != handles.size:
            raise DeformError("duplicate handle index")
        if handles.min() < 0 or handles.max() >= mesh.n:
            raise DeformError("handle index out of range")
        if handle_weight <= 0:
            raise DeformError("handle_weight must be positive")
        if roi is None:
            roi = np.arange(mesh.n)
        roi = np.unique(np.asarray(roi, dtype=np.int64))
        if not np.isin(handles, roi).all():
            raise DeformError("roi must contain every handle vertex")

        self.handles = handles
        self.handle_weight = float(handle_weight)
        self.weighting = weighting
        self.roi = roi
        self.topology_id = mesh.topology_id
        self.n = mesh.n

        free = roi
        self._free = free
        self._fixed = np.setdiff1d(np.arange(mesh.n), free, assume_unique=False)
        col_of = -np.ones(mesh.n, dtype=np.int64)
        col_of[free] = np.arange(free.size)

        lap = _laplacian(mesh, weighting)
        lap_rows = lap[free]                       # (n_free, n)
        self._lap_full = lap_rows
        self._lap_free = lap_rows[:, free].tocsr()
        self._lap_fixed = lap_rows[:, self._fixed].tocsr()

        h_rows = sp.csr_matrix(
            (np.full(handles.size, self.handle_weight),
             (np.arange(handles.size), col_of[handles])),
            shape=(handles.size, free.size),
        )
        a = sp.vstack([self._lap_free, h_rows]).tocsr()
        self.matrix = a
        try:
            self._factor = spla.splu((a.T @ a).tocsc())
        except RuntimeError as e:
            raise DeformError(f"singular deformation system: {e}") from None
        self._rest = mesh.vertices.copy()
        self._rest.setflags(write=False)

    def solve(self, handle_targets, z_mode="full", rest_vertices=None):
        """Solve for all vertex positions given per-handle targets.

        `handle_targets` is (h, 3), or (h, 2) xy targets when
        z_mode="preserve".  With z preservation the z column of every vertex
        is copied bit-for-bit from the rest shape; only x and y are solved.
        """
        rest = self._rest if rest_vertices is None else np.asarray(rest_vertices, float)
        targets = np.asarray(handle_targets, dtype=np.float64)
        n_coords = 2 if z_mode == "preserve" else 3
        if z_mode not in ("full", "preserve"):
            raise DeformError(f"unknown z_mode {z_mode!r}")
        if targets.shape != (self.handles.size, n_coords):
            raise DeformError(
                f"expected {(self.handles.size, n_coords)} targets, got {targets.shape}"
            )

        delta = self._lap_full @ rest                          # (n_free, 3)
        b_lap = delta - self._lap_fixed @ rest[self._fixed]
        out = rest.copy()
        for c in range(n_coords):
            b = np.concatenate([b_lap[:, c], self.handle_weight * targets[:, c]])
            x = self._factor.solve(self.matrix.T @ b)
            out[self._free, c] = x
        return out


class SolverCache:
    """Reuses factorizations across edits with unchanged handles/roi."""

    def __init__(self, max_entries=8):
        self._cache = {}
        self.max_entries = max_entries

    @staticmethod
    def _key(mesh, handles, handle_weight, weighting, roi):
        h = hashlib.sha256()
        h.update(mesh.topology_id.encode())
        h.update(np.asarray(handles, np.int64).tobytes())
        h.update(b"|" + str(handle_weight).encode() + b"|" + weighting.encode() + b"|")
        h.update(b"full" if roi is None else np.asarray(roi, np.int64).tobytes())
        if weighting == "cotangent":   # cotangent weights depend on geometry
            h.update(mesh.vertices.tobytes())
        return h.hexdigest()

    def get(self, mesh, handles, handle_weight=10.0, weighting="uniform", roi=None):
        key = self._key(mesh, handles, handle_weight, weighting, roi)
        solver = self._cache.get(key)
        if solver is None:
            solver = DeformSolver(mesh, handles, handle_weight, weighting, roi)
            if len(self._cache) >= self.max_entries:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = solver
        return solver


def build_deform_solver(mesh, handles, handle_weight=10.0, weighting="uniform", roi=None):
    return DeformSolver(mesh, handles, handle_weight, weighting, roi)


def solve_deform(solver, handle_targets, z_mode="full", rest_vertices=None):
    return solver.solve(handle_targets, z_mode=z_mode, rest_vertices=rest_vertices)

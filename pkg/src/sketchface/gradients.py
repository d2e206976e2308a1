"""Gradient-domain mesh operations: deformation transfer and shape exaggeration.

Both are least-squares solves over per-triangle deformation gradients.  Each
triangle gets a phantom fourth vertex along its scaled normal so the local
frame is invertible; the phantom positions are extra unknowns and discarded
after the solve.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class GradientError(ValueError):
    pass


def _triangle_frames(vertices, triangles):
    """Local 3x3 frames [v2-v1, v3-v1, v4-v1] with v4 = v1 + n/sqrt(|n|).

    Raises on degenerate triangles, naming the offender.
    """
    v1 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v1
    e2 = vertices[triangles[:, 2]] - v1
    cross = np.cross(e1, e2)
    norms = np.linalg.norm(cross, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        raise GradientError(f"degenerate triangle {int(bad[0])} (zero area)")
    e3 = cross / np.sqrt(norms)[:, None]
    return np.stack([e1, e2, e3], axis=2)      # (t, 3, 3), columns are edges


class GradientSolver:
    """Prefactorized deformation-gradient solver for one rest shape.

    Unknowns are the free real vertices plus all phantom vertices;
    `constrained` vertices are eliminated as hard constraints.
    """

    def __init__(self, rest_mesh, constrained):
        constrained = np.unique(np.asarray(constrained, dtype=np.int64))
        if constrained.size == 0:
            raise GradientError("need at least one constrained vertex (translation undetermined)")
        n = rest_mesh.n
        tris = rest_mesh.triangles
        t = len(tris)
        frames = _triangle_frames(rest_mesh.vertices, tris)
        inv = np.linalg.inv(frames)            # (t, 3, 3)

        rows, cols, vals = [], [], []
        for ti in range(t):
            d = inv[ti]
            corners = [tris[ti, 0], tris[ti, 1], tris[ti, 2], n + ti]
            for j in range(3):
                r = 3 * ti + j
                coeffs = [-d[:, j].sum(), d[0, j], d[1, j], d[2, j]]
                for vtx, cval in zip(corners, coeffs):
                    rows.append(r); cols.append(vtx); vals.append(cval)
        g = sp.csr_matrix((vals, (rows, cols)), shape=(3 * t, n + t))

        free = np.setdiff1d(np.arange(n + t), constrained)
        self._g_free = g[:, free].tocsr()
        self._g_con = g[:, constrained].tocsr()
        self._free = free
        self._constrained = constrained
        self.n = n
        self.t = t
        self.rest = rest_mesh
        self._frames = frames
        self._factor = spla.splu((self._g_free.T @ self._g_free).tocsc())

    def solve(self, target_gradients, constrained_positions):
        """Least-squares vertex positions matching (t, 3, 3) target gradients.

        `constrained_positions` is (c, 3) for the constrained vertex list.
        Returns only the n real vertex positions.
        """
        rhs_full = target_gradients.transpose(0, 2, 1).reshape(3 * self.t, 3)
        b = rhs_full - self._g_con @ constrained_positions
        x = np.empty((self._free.size, 3))
        for c in range(3):
            x[:, c] = self._factor.solve(self._g_free.T @ b[:, c])
        out = np.empty((self.n + self.t, 3))
        out[self._free] = x
        out[self._constrained] = constrained_positions
        return out[: self.n]


def deformation_gradients(neutral_mesh, deformed_vertices):
    """Per-triangle affine maps taking the neutral frames to the deformed ones."""
    frames_n = _triangle_frames(neutral_mesh.vertices, neutral_mesh.triangles)
    frames_d = _triangle_frames(deformed_vertices, neutral_mesh.triangles)
    return frames_d @ np.linalg.inv(frames_n)


class TransferOperator:
    """Deformation transfer onto one target neutral shape (Sumner-style).

    The anchor vertex pins translation: its output position is the target
    neutral position offset by the source anchor displacement, which makes
    identity and neutral transfers exact.
    """

    def __init__(self, tgt_neutral, anchor=0):
        self.tgt_neutral = tgt_neutral
        self.anchor = int(anchor)
        self._solver = GradientSolver(tgt_neutral, [self.anchor])

    def apply(self, src_neutral, src_expr_vertices):
        src_expr_vertices = np.asarray(src_expr_vertices, dtype=np.float64)
        # solve() expects gradients relative to the target rest frames;
        # reusing the source gradients verbatim is exactly Sumner's transfer.
        q = deformation_gradients(src_neutral, src_expr_vertices)
        anchor_pos = (self.tgt_neutral.vertices[self.anchor]
                      + src_expr_vertices[self.anchor]
                      - src_neutral.vertices[self.anchor])
        return self._solver.solve(q, anchor_pos[None, :])


def transfer_expression(src_neutral, src_expr, tgt_neutral, anchor=0):
    """Transfer the (src_neutral -> src_expr) deformation onto tgt_neutral."""
    expr_vertices = src_expr.vertices if hasattr(src_expr, "vertices") else src_expr
    return TransferOperator(tgt_neutral, anchor=anchor).apply(src_neutral, expr_vertices)


def exaggerate(mesh, scale, fixed_mask):
    """Scale per-triangle gradients outside `fixed_mask` and reconstruct.

    Triangles touching a fixed vertex keep scale 1; fixed vertices are hard
    constraints, so scale=1 reproduces the input exactly up to solver
    round-off.
    """
    if scale <= 0:
        raise GradientError("scale must be positive")
    fixed_mask = np.unique(np.asarray(fixed_mask, dtype=np.int64))
    if fixed_mask.size == 0:
        raise GradientError("empty fixed_mask: translation undetermined")
    solver = GradientSolver(mesh, fixed_mask)
    fixed_set = np.zeros(mesh.n, dtype=bool)
    fixed_set[fixed_mask] = True
    touches_fixed = fixed_set[mesh.triangles].any(axis=1)
    scales = np.where(touches_fixed, 1.0, float(scale))
    targets = scales[:, None, None] * np.broadcast_to(np.eye(3), (solver.t, 3, 3))
    verts = solver.solve(targets, mesh.vertices[fixed_mask])
    return mesh.with_vertices(verts)

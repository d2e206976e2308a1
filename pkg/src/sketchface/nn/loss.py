"""Vertex-space loss for coefficient regression.

E(u, v) = (1/n) sum_i w_i || recon_i(u, v) - g_i ||^2 where recon is the
bilinear reconstruction of the face and g is the ground-truth mesh.  The
gradient with respect to u and v is analytic: with B_v = core x3 v the
residual is linear in u, and symmetrically for v.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class VertexLossSpec:
    core: np.ndarray      # (3n, r_id, r_expr)
    targets: np.ndarray   # (n, 3)
    weights: np.ndarray   # (n,), per-vertex importance

    def __post_init__(self):
        n3 = self.core.shape[0]
        if self.targets.shape != (n3 // 3, 3):
            raise ValueError(
                f"targets shape {self.targets.shape} does not match core rows {n3}")
        if self.weights.shape != (n3 // 3,):
            raise ValueError("weights must be one scalar per vertex")


def curve_vertex_weights(n_vertices, curve_indices, curve_weight=4.0):
    w = np.ones(n_vertices)
    w[np.asarray(curve_indices, dtype=int)] = curve_weight
    return w


def vertex_loss(spec, u, v):
    """Returns (E, dE/du, dE/dv) in float64."""
    core = spec.core.astype(np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = spec.targets.shape[0]

    b_v = core @ v                                # (3n, r_id)
    recon = b_v @ u                               # (3n,)
    r = recon - spec.targets.astype(np.float64).ravel()
    w3 = np.repeat(spec.weights.astype(np.float64), 3)

    loss = float((w3 * r * r).sum() / n)
    wr = (2.0 / n) * w3 * r
    du = b_v.T @ wr
    b_u = np.einsum("dij,i->dj", core, u)         # (3n, r_expr)
    dv = b_u.T @ wr
    return loss, du, dv

"""Bilinear morphable model: truncated HOSVD core plus identity/expression factors.

A face is reconstructed from the reduced core by contracting an identity
weight vector along mode 2 and an expression weight vector along mode 3.
The same machinery doubles as the 2D shape encoder over sampled sketch
points (the "shape-level" network input), so the model is generic over the
length of the mode-1 vector.
"""

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensorops import mode_product, mode_product_matrix, unfold, hosvd_factors

MAGIC = b"SFCORE1\n"


@dataclass(frozen=True)
class FaceCoeffs:
    """Identity (u) and expression (v) weight vectors."""

    u: np.ndarray
    v: np.ndarray

    def concat(self):
        return np.concatenate([self.u, self.v])


@dataclass
class BilinearModel:
    """Reduced core (d, r1, r2) with orthonormal row-coefficient factors.

    `u_rows[j]` / `v_rows[k]` are the training coefficients of identity j /
    expression k; `mean_u` / `mean_v` are the prior-mean coefficients.
    """

    core: np.ndarray           # (d, r1, r2) f64
    u_rows: np.ndarray         # (n_ident, r1)
    v_rows: np.ndarray         # (n_expr, r2)
    residuals: np.ndarray = field(default=None)   # per-entry max abs error
    frobenius_residual: float = 0.0
    vertex_count: int = 0      # 0 for non-mesh models (e.g. 2D encoder)

    @property
    def r_id(self):
        return self.core.shape[1]

    @property
    def r_expr(self):
        return self.core.shape[2]

    @property
    def mean_u(self):
        return self.u_rows.mean(axis=0)

    @property
    def mean_v(self):
        return self.v_rows.mean(axis=0)


def build_bilinear(vertex_grid, r_id, r_expr):
    """Truncated HOSVD of a fully populated (n_ident, n_expr, n, 3) grid.

    Mode 1 (the stacked vertex coordinates) is never truncated.  Returns a
    :class:`BilinearModel` whose core has shape (3n, r_id, r_expr).
    """
    grid = np.asarray(vertex_grid, dtype=np.float64)
    if grid.ndim != 4 or grid.shape[3] != 3:
        raise ValueError(f"expected (n_ident, n_expr, n, 3) grid, got {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("dataset grid has missing (non-finite) entries; no imputation")
    n_ident, n_expr, n, _ = grid.shape
    if not (1 <= r_id <= n_ident):
        raise ValueError(f"r_id={r_id} out of range [1, {n_ident}]")
    if not (1 <= r_expr <= n_expr):
        raise ValueError(f"r_expr={r_expr} out of range [1, {n_expr}]")

    # 3-mode data tensor: (3n) x identities x expressions
    data = grid.reshape(n_ident, n_expr, 3 * n).transpose(2, 0, 1)
    model = _build_from_tensor(data, r_id, r_expr)
    model.vertex_count = n
    return model


def _build_from_tensor(data, r1, r2):
    u_rows = hosvd_factors(data, 2, r1)
    v_rows = hosvd_factors(data, 3, r2)
    core = mode_product_matrix(mode_product_matrix(data, u_rows.T, 2), v_rows.T, 3)

    recon = mode_product_matrix(mode_product_matrix(core, u_rows, 2), v_rows, 3)
    residuals = np.abs(recon - data).max(axis=0)
    return BilinearModel(core=core, u_rows=u_rows, v_rows=v_rows, residuals=residuals,
                         frobenius_residual=float(np.linalg.norm(recon - data)))


def reconstruct_vector(model, u, v):
    """Core contracted with u (mode 2) and v (mode 3); returns the mode-1 vector."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != (model.r_id,):
        raise ValueError(f"u has shape {u.shape}, expected ({model.r_id},)")
    if v.shape != (model.r_expr,):
        raise ValueError(f"v has shape {v.shape}, expected ({model.r_expr},)")
    return mode_product(mode_product(model.core, u, 2), v, 2)


def reconstruct(model, coeffs):
    """Vertex positions (n, 3) for a mesh-valued model."""
    vec = reconstruct_vector(model, coeffs.u, coeffs.v)
    return vec.reshape(-1, 3)


@dataclass
class FitResult:
    coeffs: FaceCoeffs
    objectives: list
    converged: bool
    used_prior: bool = False


def fit_vector(model, target, tol=1e-8, max_iters=100, init_v=None):
    """Alternating least squares for (u, v) minimizing ||core x2 u x3 v - target||^2.

    Each half-step is an exact least-squares solve, so the objective never
    increases.  The bilinear scale ambiguity is resolved by renormalizing
    ||v|| = 1 after every sweep and folding the scale into u.
    """
    target = np.asarray(target, dtype=np.float64).ravel()
    if target.shape[0] != model.core.shape[0]:
        raise ValueError(
            f"target length {target.shape[0]} != mode-1 size {model.core.shape[0]}"
        )
    if not np.all(np.isfinite(target)):
        return FitResult(
            FaceCoeffs(model.mean_u.copy(), model.mean_v.copy()),
            objectives=[], converged=False, used_prior=True,
        )

    v = model.mean_v.copy() if init_v is None else np.asarray(init_v, dtype=np.float64).copy()
    if np.linalg.norm(v) == 0:
        v = np.ones(model.r_expr)
    v /= np.linalg.norm(v)

    objectives = []
    u = None
    converged = False
    for _ in range(max_iters):
        a_v = np.tensordot(model.core, v, axes=(2, 0))       # (d, r1)
        u, *_ = np.linalg.lstsq(a_v, target, rcond=None)
        a_u = np.tensordot(model.core, u, axes=(1, 0))       # (d, r2)
        v, *_ = np.linalg.lstsq(a_u, target, rcond=None)
        obj = float(np.sum((a_u @ v - target) ** 2))
        scale = np.linalg.norm(v)
        if scale > 0:
            v /= scale
            u *= scale
        objectives.append(obj)
        if len(objectives) >= 2:
            prev = objectives[-2]
            if prev <= 0.0 or (prev - obj) <= tol * prev:
                converged = True
                break
    return FitResult(FaceCoeffs(u, v), objectives, converged)


def fit_coeffs_to_mesh(model, vertices, tol=1e-8, max_iters=100):
    """ALS fit of FaceCoeffs to an (n, 3) vertex array on the shared topology."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if model.vertex_count and vertices.shape != (model.vertex_count, 3):
        raise ValueError(
            f"vertices have shape {vertices.shape}, expected ({model.vertex_count}, 3)"
        )
    return fit_vector(model, vertices.ravel(), tol=tol, max_iters=max_iters)


def save_model(model, path_or_buf):
    """Versioned little-endian binary: header + f64 core and factors.

    Layout: magic "SFCORE1\\n"; u32 x5 (d, r1, r2, n_ident, n_expr);
    u32 vertex_count; then core (d*r1*r2), u_rows (n_ident*r1),
    v_rows (n_expr*r2) as little-endian f64 in C order.
    """
    d, r1, r2 = model.core.shape
    header = MAGIC + struct.pack(
        "<6I", d, r1, r2, model.u_rows.shape[0], model.v_rows.shape[0],
        model.vertex_count,
    )
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (model.core, model.u_rows, model.v_rows)
    )
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(header + payload)
    else:
        with open(path_or_buf, "wb") as f:
            f.write(header + payload)


def load_model(path_or_buf):
    if hasattr(path_or_buf, "read"):
        raw = path_or_buf.read()
    else:
        with open(path_or_buf, "rb") as f:
            raw = f.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError("not a bilinear model file (bad magic)")
    off = len(MAGIC)
    d, r1, r2, n_ident, n_expr, vertex_count = struct.unpack_from("<6I", raw, off)
    off += 24

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += count * 8
        return arr.astype(np.float64)

    core = take((d, r1, r2))
    u_rows = take((n_ident, r1))
    v_rows = take((n_expr, r2))
    return BilinearModel(core=core, u_rows=u_rows, v_rows=v_rows,
                         vertex_count=vertex_count)

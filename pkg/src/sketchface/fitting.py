"""Direct coefficient fitting against 2D curve evidence.

This is the no-learning baseline: given 2D target positions for a subset of
mesh vertices (curve points read off a sketch), alternate least squares over
the identity and expression coefficients so the orthographic projection of
the reconstructed face matches the targets.  A small Tikhonov pull toward
the prior mean keeps the problem well posed when the evidence is sparse.
"""

from dataclasses import dataclass

import numpy as np

from .bilinear import FaceCoeffs, reconstruct
from .curves2d import arclength_fractions, points_at_fractions, resample_polyline


@dataclass
class FitTargets:
    indices: np.ndarray   # (k,) vertex indices
    pixels: np.ndarray    # (k, 2) target pixel positions

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (len(self.indices), 2):
            raise ValueError("one pixel target per index is required")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("duplicate target indices")


@dataclass
class MMFitResult:
    coeffs: FaceCoeffs
    objectives: list
    converged: bool
    rms_px: float


def targets_from_polylines(curves, polylines, reference=None, camera=None):
    """Pair curve vertex indices with arclength-sampled sketch points.

    `polylines` maps curve name to drawn points.  Wrinkle curves carry no
    vertex correspondence and are ignored.  Curves absent from the sketch
    are skipped; fitting then simply sees less evidence.

    With a `reference` mesh and `camera`, each curve vertex is sampled at
    the arclength fraction it occupies along the reference's projected
    curve, which gives a much tighter correspondence than uniform spacing.
    """
    index_rows, pixel_rows = [], []
    seen = set()
    named = [("silhouette", curves.silhouette, True)]
    named += [(n, idx, False) for n, idx in curves.features.items()]
    for name, idx, closed in named:
        pts = polylines.get(name)
        if pts is None or len(pts) < 2:
            continue
        if reference is not None:
            ref = camera.project(reference.vertices[np.asarray(idx)])
            fr = arclength_fractions(ref, closed=closed)
            samples = points_at_fractions(pts, fr, closed=closed)
        else:
            samples = resample_polyline(pts, len(idx), closed=closed)
        for i, p in zip(idx, samples):
            if i not in seen:
                seen.add(i)
                index_rows.append(i)
                pixel_rows.append(p)
    return FitTargets(np.array(index_rows), np.array(pixel_rows))


def _projection_rows(slab, camera):
    """slab is (k, 3, r); returns the (2k, r) matrix mapping coefficients to
    centered pixel coordinates, plus the scale/sign bookkeeping."""
    s = camera.scale
    rows = np.empty((2 * slab.shape[0], slab.shape[2]))
    rows[0::2] = s * slab[:, 0, :]
    rows[1::2] = -s * slab[:, 1, :]
    return rows


def mm_fit(model, targets, camera, lam=1e-3, max_iters=60, tol=1e-12):
    """Alternating least squares on the projected curve residual."""
    core = model.core
    r1, r2 = core.shape[1], core.shape[2]
    k = len(targets.indices)
    if lam <= 0 and 2 * k < r1 + r2:
        raise ValueError(
            f"{2 * k} equations cannot determine {r1 + r2} coefficients "
            "without regularization")

    # per-target core slabs: (k, 3, r1, r2)
    rows3 = (3 * targets.indices[:, None] + np.arange(3)).ravel()
    slabs = core[rows3].reshape(k, 3, r1, r2)

    # px - cx = s * x and py - cy = -s * y; the y sign lives in the rows
    cx, cy = camera.center
    t = np.empty(2 * k)
    t[0::2] = targets.pixels[:, 0] - cx
    t[1::2] = targets.pixels[:, 1] - cy

    u_bar, v_bar = model.mean_u, model.mean_v
    u, v = u_bar.copy(), v_bar.copy()

    def objective(u, v):
        m = _projection_rows(np.einsum("kcij,j->kci", slabs, v), camera)
        r = m @ u - t
        return float(r @ r + lam * ((u - u_bar) @ (u - u_bar)
                                    + (v - v_bar) @ (v - v_bar)))

    objectives = [objective(u, v)]
    converged = False
    for _ in range(max_iters):
        m = _projection_rows(np.einsum("kcij,j->kci", slabs, v), camera)
        u = np.linalg.solve(m.T @ m + lam * np.eye(r1), m.T @ t + lam * u_bar)
        m = _projection_rows(np.einsum("kcij,i->kcj", slabs, u), camera)
        v = np.linalg.solve(m.T @ m + lam * np.eye(r2), m.T @ t + lam * v_bar)
        obj = objective(u, v)
        prev = objectives[-1]
        objectives.append(obj)
        if prev <= 0.0 or (prev - obj) <= tol * prev:
            converged = True
            break

    m = _projection_rows(np.einsum("kcij,j->kci", slabs, v), camera)
    r = m @ u - t
    rms = float(np.sqrt((r.reshape(-1, 2) ** 2).sum(axis=1).mean()))
    return MMFitResult(FaceCoeffs(u, v), objectives, converged, rms)


def fit_vertices(model, targets, camera, **kw):
    res = mm_fit(model, targets, camera, **kw)
    return reconstruct(model, res.coeffs), res


def mean_vertex_error(pred, gt, face_height_mm=200.0):
    """Mean per-vertex distance after scaling the ground truth's vertical
    extent to `face_height_mm` (the same scale is applied to both meshes)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    extent = float(gt[:, 1].max() - gt[:, 1].min())
    if extent <= 0:
        raise ValueError("ground truth has no vertical extent")
    scale = face_height_mm / extent
    return float(np.linalg.norm(pred - gt, axis=1).mean() * scale)

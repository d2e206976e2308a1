"""Shape-level sketch encoding: bilinear coefficients of sampled line points.

A fixed plan samples evenly-arclength-spaced points on the silhouette and
the 11 feature lines; the stacked 2D coordinates are compressed by a second
bilinear model.  The concatenated identity/expression coefficients form the
network's shape-level input vector (66-d at the full-scale default ranks).
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .bilinear import _build_from_tensor, fit_vector, reconstruct_vector, save_model, load_model
from .curves2d import resample_polyline
from .mesh import FEATURE_NAMES

DEFAULT_PLAN = (("silhouette", 32, True),) + tuple((f, 16, False) for f in FEATURE_NAMES)

ENC_MAGIC = b"SFENC1\n"


class ShapeEncodeError(ValueError):
    pass


@dataclass
class ShapeEncoder:
    model: "BilinearModel"         # bilinear model over the 2m sample vector
    sample_plan: tuple             # ((name, count, closed), ...)
    prior_vector: np.ndarray       # mean sample vector, used for imputation
    truncation_rms: float          # max training-entry sample-point RMS

    @property
    def output_length(self):
        return self.model.r_id + self.model.r_expr

    @property
    def point_count(self):
        return sum(c for _, c, _ in self.sample_plan)


def sample_vector(polylines, plan=DEFAULT_PLAN, prior=None, impute_missing=False):
    """Stack resampled curve points into one vector; returns (vector, imputed)."""
    chunks = []
    imputed = []
    offset = 0
    for name, count, closed in plan:
        pts = polylines.get(name)
        if pts is None or len(pts) < 2:
            if not impute_missing or prior is None:
                imputed.append(name)
                chunks.append(np.zeros(2 * count))
            else:
                imputed.append(name)
                chunks.append(prior[offset: offset + 2 * count])
        else:
            chunks.append(resample_polyline(pts, count, closed=closed).ravel())
        offset += 2 * count
    missing_fatal = [n for n in imputed] if not impute_missing else []
    if missing_fatal:
        raise ShapeEncodeError(f"sketch is missing curves: {missing_fatal}")
    return np.concatenate(chunks), imputed


def build_shape_encoder(polyline_grid, r_id=50, r_expr=16, plan=DEFAULT_PLAN):
    """Fit the 2D bilinear model over a (n_ident, n_expr) grid of sketches.

    `polyline_grid[i][k]` is the {name: points} map of the clean render of
    entry (i, k).  Ranks are clamped to the grid dimensions.
    """
    n_ident = len(polyline_grid)
    n_expr = len(polyline_grid[0])
    vectors = np.empty((n_ident, n_expr, 2 * sum(c for _, c, _ in plan)))
    for i in range(n_ident):
        for k in range(n_expr):
            vec, imputed = sample_vector(polyline_grid[i][k], plan, impute_missing=False)
            vectors[i, k] = vec
    r1 = min(r_id, n_ident)
    r2 = min(r_expr, n_expr)
    model = _build_from_tensor(vectors.transpose(2, 0, 1), r1, r2)

    recon_err = np.einsum("dab,ia,jb->ijd", model.core, model.u_rows, model.v_rows) \
        - vectors
    rms = np.sqrt((recon_err.reshape(n_ident, n_expr, -1, 2) ** 2).sum(axis=3).mean(axis=2))
    trunc = float(rms.max())
    prior = vectors.mean(axis=(0, 1))
    return ShapeEncoder(model=model, sample_plan=tuple(plan),
                        prior_vector=prior, truncation_rms=trunc)


@dataclass
class EncodedShape:
    vector: np.ndarray
    coeffs_u: np.ndarray
    coeffs_v: np.ndarray
    imputed: list


def encode_shape(encoder, polylines, impute_missing=False):
    """Fit the sketch's sample vector; returns the stacked (u2, v2) coefficients."""
    vec, imputed = sample_vector(polylines, encoder.sample_plan,
                                 prior=encoder.prior_vector,
                                 impute_missing=impute_missing)
    res = fit_vector(encoder.model, vec)
    u, v = res.coeffs.u, res.coeffs.v
    return EncodedShape(vector=np.concatenate([u, v]), coeffs_u=u, coeffs_v=v,
                        imputed=imputed)


def decode_shape(encoder, encoded):
    """Sample-point positions reconstructed from encoded coefficients, (m, 2)."""
    vec = reconstruct_vector(encoder.model, encoded.coeffs_u, encoded.coeffs_v)
    return vec.reshape(-1, 2)


def save_encoder(encoder, path):
    meta = json.dumps({
        "plan": [[n, c, bool(cl)] for n, c, cl in encoder.sample_plan],
        "truncation_rms": encoder.truncation_rms,
    }).encode()
    with open(path, "wb") as f:
        f.write(ENC_MAGIC)
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        prior = np.ascontiguousarray(encoder.prior_vector, dtype="<f8")
        f.write(struct.pack("<I", prior.size))
        f.write(prior.tobytes())
        save_model(encoder.model, f)


def load_encoder(path):
    with open(path, "rb") as f:
        if f.read(len(ENC_MAGIC)) != ENC_MAGIC:
            raise ValueError("not a shape encoder file (bad magic)")
        meta_len = struct.unpack("<I", f.read(4))[0]
        meta = json.loads(f.read(meta_len).decode())
        prior_len = struct.unpack("<I", f.read(4))[0]
        prior = np.frombuffer(f.read(8 * prior_len), dtype="<f8").astype(np.float64)
        model = load_model(f)
    plan = tuple((n, c, bool(cl)) for n, c, cl in meta["plan"])
    return ShapeEncoder(model=model, sample_plan=plan, prior_vector=prior,
                        truncation_rms=float(meta["truncation_rms"]))

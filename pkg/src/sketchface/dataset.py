"""Procedural face dataset: identities x exaggeration levels x expressions.

Expressions are designed once on the template and carried to every identity
by deformation transfer; exaggerated variants of an identity enter the data
tensor as distinct identities.  Every entry gets a rendered sketch; extra
in-subspace models are added by interpolating bilinear coefficients.
Generation is deterministic: each entity derives its own rng stream from
(seed, tag, index), so regeneration under one seed is byte-identical.
"""

import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import bilinear
from .bilinear import FaceCoeffs, build_bilinear
from .gradients import TransferOperator, exaggerate
from .mesh import CurveSet, load_obj, save_obj, project_curves
from .render import DEFAULT_CAMERA, RenderOptions, SketchImage, render_sketch
from .shape_encoder import (
    build_shape_encoder, encode_shape, load_encoder, save_encoder,
)
from .template import (
    TemplateConfig, expression_displacement, fixed_exaggeration_mask,
    generate_identity, generate_template, sample_identity_params,
)

GENERATOR_VERSION = "sketchface-dataset-1"


@dataclass(frozen=True)
class DatasetConfig:
    n_base_identities: int = 40
    exagg_scales: tuple = (1.0, 1.3, 1.6, 2.0)
    n_expressions: int = 10
    vertex_budget: int = 1225
    r_id: int = 50
    r_expr: int = 16
    shape_r_id: int = 50
    shape_r_expr: int = 16
    n_interpolated: int = 500
    test_fraction: float = 0.10
    seed: int = 7
    render: RenderOptions = field(default_factory=RenderOptions)

    def __post_init__(self):
        if self.n_base_identities < 2 or self.n_expressions < 2:
            raise ValueError("need at least 2 identities and 2 expressions")

    @property
    def n_identities(self):
        """Tensor identities: base identities times exaggeration levels."""
        return self.n_base_identities * len(self.exagg_scales)


@dataclass
class Entry:
    id: str
    kind: str          # "grid" | "interp"
    ident: int         # tensor identity index (-1 for interp)
    expr: int          # expression index (-1 for interp)
    split: str = "train"


class FaceDataset:
    def __init__(self, config, template, curves, entries, vertices, coeffs,
                 shape_vectors, sketches, model, encoder):
        self.config = config
        self.template = template
        self.curves = curves
        self.entries = entries
        self.vertices = vertices            # (N, n, 3) f32
        self.coeffs = coeffs                # (N, r_id + r_expr) f32
        self.shape_vectors = shape_vectors  # (N, shape_dim) f32
        self.sketches = sketches            # list of SketchImage
        self.model = model
        self.encoder = encoder

    @property
    def n_vertices(self):
        return self.template.n

    def entry_vertices(self, j):
        return self.vertices[j].astype(np.float64)

    def entry_coeffs(self, j):
        r = self.model.r_id
        row = self.coeffs[j].astype(np.float64)
        return FaceCoeffs(row[:r], row[r:])

    def split_indices(self, split):
        return [j for j, e in enumerate(self.entries) if e.split == split]

    def mean_vertices(self):
        return self.vertices.astype(np.float64).mean(axis=0)

    def content_hash(self):
        h = hashlib.sha256()
        h.update(json.dumps(_manifest_core(self), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.vertices, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.coeffs, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.shape_vectors, dtype="<f4").tobytes())
        for sk in self.sketches:
            h.update(sk.raster.tobytes())
        return h.hexdigest()


def _entry_rng(seed, tag, index):
    return np.random.default_rng([seed, tag, index])


def build_vertex_grid(config=DatasetConfig(), progress=None):
    """Generate the full (n_ident, n_expr, n, 3) f64 vertex grid.

    Returns (template, curves, grid).  The grid rows follow the tensor
    identity ordering: base identity index times exaggeration level.
    """
    template, curves = generate_template(TemplateConfig(vertex_budget=config.vertex_budget))
    curves.validate(template.n)
    n_levels = len(config.exagg_scales)
    fixed_mask = fixed_exaggeration_mask(template)

    # expression sources on the template
    expr_meshes = [template.vertices + expression_displacement(template, k, seed=config.seed)
                   for k in range(config.n_expressions)]

    n_ident = config.n_identities
    grid = np.empty((n_ident, config.n_expressions, template.n, 3), dtype=np.float64)
    for base in range(config.n_base_identities):
        params = sample_identity_params(_entry_rng(config.seed, 1, base))
        neutral = generate_identity(template, params)
        for li, scale in enumerate(config.exagg_scales):
            ident = base * n_levels + li
            if scale == 1.0:
                level_neutral = neutral
            else:
                level_neutral = exaggerate(neutral, scale, fixed_mask)
            op = TransferOperator(level_neutral)
            for k in range(config.n_expressions):
                if k == 0:
                    grid[ident, k] = level_neutral.vertices
                else:
                    grid[ident, k] = op.apply(template, expr_meshes[k])
            if progress:
                progress(f"identity {ident + 1}/{n_ident}")
    return template, curves, grid


def build_dataset(config=DatasetConfig(), progress=None):
    template, curves, grid = build_vertex_grid(config, progress)
    n_ident = config.n_identities

    r_id = min(config.r_id, n_ident)
    r_expr = min(config.r_expr, config.n_expressions)
    model = build_bilinear(grid, r_id, r_expr)

    entries = []
    vertices = []
    coeffs = []
    for ident in range(n_ident):
        for k in range(config.n_expressions):
            entries.append(Entry(id=f"g{ident:03d}e{k:02d}", kind="grid",
                                 ident=ident, expr=k))
            vertices.append(grid[ident, k])
            coeffs.append(np.concatenate([model.u_rows[ident], model.v_rows[k]]))

    # extra in-subspace models by interpolating u-v parameters of random pairs
    n_grid = len(entries)
    for k in range(config.n_interpolated):
        rng = _entry_rng(config.seed, 3, k)
        a, b = rng.integers(0, n_grid, size=2)
        lam_u, lam_v = rng.uniform(0.0, 1.0, size=2)
        ca, cb = coeffs[a], coeffs[b]
        u = lam_u * ca[:r_id] + (1 - lam_u) * cb[:r_id]
        v = lam_v * ca[r_id:] + (1 - lam_v) * cb[r_id:]
        entries.append(Entry(id=f"x{k:04d}", kind="interp", ident=-1, expr=-1))
        vertices.append(bilinear.reconstruct(model, FaceCoeffs(u, v)))
        coeffs.append(np.concatenate([u, v]))

    vertices = np.asarray(vertices, dtype=np.float32)
    coeffs = np.asarray(coeffs, dtype=np.float32)

    # shape encoder from clean projections of the tensor grid
    polyline_grid = []
    for ident in range(n_ident):
        row = []
        for k in range(config.n_expressions):
            mesh = template.with_vertices(grid[ident, k])
            row.append({name: pts for name, _cat, pts, _c
                        in project_curves(mesh, curves, DEFAULT_CAMERA)})
        polyline_grid.append(row)
    encoder = build_shape_encoder(polyline_grid, config.shape_r_id, config.shape_r_expr)

    # rendered sketches + shape-level vectors, one rng stream per entry
    sketches = []
    shape_vectors = np.empty((len(entries), encoder.output_length), dtype=np.float32)
    for j, entry in enumerate(entries):
        mesh = template.with_vertices(vertices[j].astype(np.float64))
        opts = dataclasses.replace(config.render,
                                   seed=int(_entry_rng(config.seed, 2, j).integers(2 ** 31)))
        sk = render_sketch(mesh, curves, opts)
        sk.provenance["entry"] = entry.id
        sketches.append(sk)
        shape_vectors[j] = encode_shape(encoder, sk.polyline_map()).vector
        if progress and (j + 1) % 200 == 0:
            progress(f"rendered {j + 1}/{len(entries)}")

    # 10% test split, disjoint by construction
    perm = _entry_rng(config.seed, 4, 0).permutation(len(entries))
    n_test = round(config.test_fraction * len(entries))
    for j in perm[:n_test]:
        entries[j].split = "test"

    return FaceDataset(config, template, curves, entries, vertices, coeffs,
                       shape_vectors, sketches, model, encoder)


def raster_without_wrinkles(sketch):
    """Re-rasterize a sketch keeping only silhouette and feature lines."""
    from .render import rasterize_sketch_polylines
    kept = [(n, c, p) for n, c, p in sketch.polylines if c != "wrinkle"]
    return rasterize_sketch_polylines(kept)


# ---------------------------------------------------------------------------
# Persistence: manifest JSON + binary blobs + 1-bit PNGs + polyline JSON

def _manifest_core(ds):
    cfg = dataclasses.asdict(ds.config)
    cfg["render"] = dataclasses.asdict(ds.config.render)
    return {
        "generator_version": GENERATOR_VERSION,
        "config": cfg,
        "n_vertices": int(ds.n_vertices),
        "n_triangles": int(len(ds.template.triangles)),
        "topology_id": ds.template.topology_id,
        "ranks": [int(ds.model.r_id), int(ds.model.r_expr)],
        "shape_dim": int(ds.encoder.output_length),
        "entries": [[e.id, e.kind, e.ident, e.expr, e.split] for e in ds.entries],
    }


def save_dataset(ds, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "sketches"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "polylines"), exist_ok=True)

    save_obj(ds.template, os.path.join(out_dir, "template.obj"))
    with open(os.path.join(out_dir, "curves.json"), "w") as f:
        json.dump({
            "silhouette": ds.curves.silhouette.tolist(),
            "features": {k: v.tolist() for k, v in ds.curves.features.items()},
            "wrinkles": {k: v.tolist() for k, v in ds.curves.wrinkles.items()},
        }, f)
    for name, arr in (("vertices.f32", ds.vertices), ("coeffs.f32", ds.coeffs),
                      ("shape_vectors.f32", ds.shape_vectors)):
        with open(os.path.join(out_dir, name), "wb") as f:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    bilinear.save_model(ds.model, os.path.join(out_dir, "core.bin"))
    save_encoder(ds.encoder, os.path.join(out_dir, "encoder.bin"))

    for entry, sk in zip(ds.entries, ds.sketches):
        img = Image.fromarray((sk.raster * 255).astype(np.uint8)).convert("1")
        img.save(os.path.join(out_dir, "sketches", f"{entry.id}.png"))
        with open(os.path.join(out_dir, "polylines", f"{entry.id}.json"), "w") as f:
            json.dump([[n, c, np.asarray(p).tolist()] for n, c, p in sk.polylines], f)

    manifest = _manifest_core(ds)
    manifest["content_hash"] = ds.content_hash()
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_dataset(out_dir):
    with open(os.path.join(out_dir, "manifest.json")) as f:
        manifest = json.load(f)
    cfg_dict = dict(manifest["config"])
    cfg_dict["render"] = RenderOptions(**cfg_dict["render"])
    cfg_dict["exagg_scales"] = tuple(cfg_dict["exagg_scales"])
    config = DatasetConfig(**cfg_dict)

    template = load_obj(os.path.join(out_dir, "template.obj"))
    template.topology_id = manifest["topology_id"]
    with open(os.path.join(out_dir, "curves.json")) as f:
        cj = json.load(f)
    curves = CurveSet(silhouette=cj["silhouette"], features=cj["features"],
                      wrinkles=cj["wrinkles"])

    entries = [Entry(id=e[0], kind=e[1], ident=e[2], expr=e[3], split=e[4])
               for e in manifest["entries"]]
    n = manifest["n_vertices"]

    def blob(name, shape):
        with open(os.path.join(out_dir, name), "rb") as f:
            return np.frombuffer(f.read(), dtype="<f4").reshape(shape).astype(np.float32)

    vertices = blob("vertices.f32", (len(entries), n, 3))
    r_total = sum(manifest["ranks"])
    coeffs = blob("coeffs.f32", (len(entries), r_total))
    shape_vectors = blob("shape_vectors.f32", (len(entries), manifest["shape_dim"]))
    model = bilinear.load_model(os.path.join(out_dir, "core.bin"))
    encoder = load_encoder(os.path.join(out_dir, "encoder.bin"))

    sketches = []
    for e in entries:
        img = Image.open(os.path.join(out_dir, "sketches", f"{e.id}.png"))
        raster = (np.asarray(img) > 0).astype(np.uint8)
        with open(os.path.join(out_dir, "polylines", f"{e.id}.json")) as f:
            polys = [(n_, c_, np.asarray(p_, dtype=np.float64)) for n_, c_, p_ in json.load(f)]
        sketches.append(SketchImage(raster=raster, polylines=polys,
                                    provenance={"entry": e.id}))
    return FaceDataset(config, template, curves, entries, vertices, coeffs,
                       shape_vectors, sketches, model, encoder)

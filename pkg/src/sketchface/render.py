"""Sketch rendering: project predefined curves, augment, rasterize.

Wrinkle strokes come from the predefined wrinkle curves rather than a
suggestive-contour pass; the raster is always the exact rasterization of
the polylines stored alongside it.
"""

from dataclasses import dataclass, replace

import numpy as np

from .curves2d import rasterize_polylines, smooth_offsets
from .mesh import CANVAS_SIZE, Camera, project_curves

# face of height 200 mm fills ~82% of the 256 px canvas
DEFAULT_CAMERA = Camera(scale=1.05)


@dataclass(frozen=True)
class RenderOptions:
    rot_jitter_deg: float = 3.0
    trans_jitter_px: float = 4.0
    line_removal_prob: float = 0.1    # applies to wrinkle lines only
    line_deform_px: float = 2.0
    wrinkles_on: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.line_removal_prob <= 1.0):
            raise ValueError("line_removal_prob must be in [0, 1]")
        if min(self.rot_jitter_deg, self.trans_jitter_px, self.line_deform_px) < 0:
            raise ValueError("jitter magnitudes must be >= 0")

    @classmethod
    def clean(cls, wrinkles_on=True, seed=0):
        return cls(rot_jitter_deg=0.0, trans_jitter_px=0.0, line_removal_prob=0.0,
                   line_deform_px=0.0, wrinkles_on=wrinkles_on, seed=seed)

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass
class SketchImage:
    raster: np.ndarray              # (256, 256) uint8, values {0, 1}
    polylines: list                 # [(name, category, (k, 2) array), ...]
    provenance: dict

    def polyline_map(self):
        return {name: pts for name, _, pts in self.polylines}


def render_sketch(mesh, curve_set, options=RenderOptions(), camera=DEFAULT_CAMERA):
    rng = np.random.default_rng(options.seed)
    center = np.asarray(camera.center)

    theta = np.deg2rad(rng.normal(0.0, options.rot_jitter_deg)) if options.rot_jitter_deg else 0.0
    shift = rng.normal(0.0, options.trans_jitter_px, size=2) if options.trans_jitter_px else np.zeros(2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])

    polylines = []
    for name, category, pts, _clipped in project_curves(mesh, curve_set, camera):
        if category == "wrinkle":
            if not options.wrinkles_on:
                continue
            if options.line_removal_prob and rng.random() < options.line_removal_prob:
                continue
        pts = (pts - center) @ rot.T + center + shift
        if options.line_deform_px:
            pts = pts + smooth_offsets(rng, len(pts), options.line_deform_px)
        pts = np.clip(pts, 0.0, np.nextafter(float(CANVAS_SIZE), 0.0))
        polylines.append((name, category, pts))

    raster = rasterize_polylines(
        [(name, pts) for name, _, pts in polylines], closed_names={"silhouette"})
    return SketchImage(raster=raster, polylines=polylines,
                       provenance={"seed": options.seed,
                                   "wrinkles_on": options.wrinkles_on})


def rasterize_sketch_polylines(polylines):
    """Re-rasterize stored (name, category, points) polylines."""
    return rasterize_polylines(
        [(name, pts) for name, _, pts in polylines], closed_names={"silhouette"})

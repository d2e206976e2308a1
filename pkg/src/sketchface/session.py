"""Interactive editing state machine.

Three modes: initial sketching (free drawing on a blank canvas, model
updated purely by inference), follow-up sketching (erase/redraw individual
lines with gap snapping, inference plus handle deformation that preserves
depth), and gesture refinement (classified strokes select regions, translate
handles, bulge or depress, and drive undo/redo).

Every public operation appends to a JSON-lines-compatible event log with a
monotonically increasing sequence number; replaying the log against the same
assets reproduces the state hash exactly.
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .bilinear import FaceCoeffs, reconstruct
from .curves2d import rasterize_polylines, resample_polyline
from .deform import SolverCache
from .fitting import targets_from_polylines
from .mesh import CANVAS_SIZE, FEATURE_NAMES, project_curves, vertex_normals
from .nn.network import predict_coeffs
from .render import DEFAULT_CAMERA
from .shape_encoder import encode_shape

MODES = ("initial_sketching", "followup_sketching", "refinement")

STROKE_SPACING_PX = 2.0
GAP_PROXIMITY_PX = 10.0   # gap-fill vs wrinkle decision threshold
SNAP_BLEND_FRACTION = 0.10
SILHOUETTE_EDIT_RADIUS_PX = 25.0
BULGE_DELTAS_MM = {1: 1.0, 2: 2.5, 3: 5.0}
UNDO_DEPTH = 128          # comfortably above the guaranteed 64

CONTOUR_PAIRS = {
    "left_eye_upper": "left_eye_lower", "left_eye_lower": "left_eye_upper",
    "right_eye_upper": "right_eye_lower", "right_eye_lower": "right_eye_upper",
    "mouth_upper": "mouth_lower", "mouth_lower": "mouth_upper",
}


class SessionError(RuntimeError):
    pass


@dataclass
class SessionAssets:
    model: object            # BilinearModel
    encoder: object          # ShapeEncoder
    net: object              # RegressionNet
    template: object         # Mesh
    curves: object           # CurveSet
    camera: object = DEFAULT_CAMERA
    gesture_classifier: object = None
    solver_cache: SolverCache = field(default_factory=SolverCache)


# ---------------------------------------------------------------------------
# sketch document

@dataclass
class Line:
    segments: list = field(default_factory=list)  # ordered, disjoint (k, 2) arrays
    gap: object = None        # (start_pt, end_pt, insert_index) or None
    closed: bool = False

    def copy(self):
        return Line([s.copy() for s in self.segments],
                    None if self.gap is None else
                    (self.gap[0].copy(), self.gap[1].copy(), self.gap[2]),
                    self.closed)


class SketchDocument:
    def __init__(self):
        self.lines = {"silhouette": Line(closed=True)}
        for name in FEATURE_NAMES:
            self.lines[name] = Line()
        self.wrinkles = []      # list of (k, 2) arrays

    def copy(self):
        doc = SketchDocument.__new__(SketchDocument)
        doc.lines = {name: line.copy() for name, line in self.lines.items()}
        doc.wrinkles = [w.copy() for w in self.wrinkles]
        return doc

    def open_gaps(self):
        return {name: line.gap for name, line in self.lines.items()
                if line.gap is not None}

    def line_points(self, name):
        line = self.lines[name]
        if not line.segments:
            return None
        return np.vstack(line.segments)

    def polyline_map(self):
        """Named polylines for encoding/fitting; lines mid-erase are omitted."""
        out = {}
        for name, line in self.lines.items():
            if line.gap is None and line.segments:
                out[name] = self.line_points(name)
        return out

    def all_polylines(self):
        """(name, points) pairs for rasterization, wrinkles included."""
        items = [(name, self.line_points(name))
                 for name, line in self.lines.items() if line.segments]
        items += [(f"wrinkle_{i}", w) for i, w in enumerate(self.wrinkles)]
        return items

    def is_empty(self):
        return not self.wrinkles and all(not l.segments for l in self.lines.values())

    def to_json(self):
        return {
            "lines": {
                name: {
                    "segments": [s.tolist() for s in line.segments],
                    "gap": None if line.gap is None else
                        [line.gap[0].tolist(), line.gap[1].tolist(), line.gap[2]],
                    "closed": line.closed,
                } for name, line in self.lines.items()},
            "wrinkles": [w.tolist() for w in self.wrinkles],
        }

    @classmethod
    def from_json(cls, doc):
        out = cls()
        for name, rec in doc["lines"].items():
            line = Line(closed=rec["closed"])
            line.segments = [np.asarray(s, dtype=np.float64) for s in rec["segments"]]
            if rec["gap"] is not None:
                line.gap = (np.asarray(rec["gap"][0]), np.asarray(rec["gap"][1]),
                            rec["gap"][2])
            out.lines[name] = line
        out.wrinkles = [np.asarray(w, dtype=np.float64) for w in doc["wrinkles"]]
        return out


@dataclass
class EraseTarget:
    kind: str                 # "feature" | "wrinkle" | "silhouette"
    name: str = None          # feature name
    index: int = 0            # segment / wrinkle index
    span: tuple = None        # (f0, f1) arclength fractions for silhouette


@dataclass
class GestureAction:
    kind: str                 # set_roi | translate_xy | silhouette_edit |
                              # bulge | depress | undo | redo | rejected
    label: str = ""
    confidence: float = 0.0
    level: int = 0
    vector: tuple = None


# ---------------------------------------------------------------------------
# session state

class SessionState:
    def __init__(self, assets, mode):
        self.assets = assets
        self.mode = mode
        self.sketch = SketchDocument()
        self.coeffs = FaceCoeffs(assets.model.mean_u, assets.model.mean_v)
        self.vertices = assets.template.vertices.copy()
        self.roi = np.arange(assets.template.n)
        self.handles = np.asarray(assets.curves.handle_indices())
        self.undo_stack = []
        self.redo_stack = []
        self.events = []
        self.last_handle_rms_px = 0.0
        self.notices = []

    # -- hashing / logging --------------------------------------------------

    def state_hash(self):
        h = hashlib.sha256()
        h.update(json.dumps(self.sketch.to_json(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.coeffs.u).tobytes())
        h.update(np.ascontiguousarray(self.coeffs.v).tobytes())
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.sort(self.roi).astype(np.int64).tobytes())
        h.update(np.sort(self.handles).astype(np.int64).tobytes())
        h.update(self.mode.encode())
        return h.hexdigest()

    def _log(self, op, **args):
        self.events.append({"seq": len(self.events) + 1, "op": op, "args": args})

    def event_log_lines(self):
        return [json.dumps(e, sort_keys=True) for e in self.events]

    # -- undo machinery -----------------------------------------------------

    _TRACKED = ("coeffs", "vertices", "roi", "handles", "mode")

    def _capture(self):
        snap = {"sketch": self.sketch.copy()}
        for name in self._TRACKED:
            snap[name] = copy.deepcopy(getattr(self, name))
        return snap

    @staticmethod
    def _changed(a, b):
        if isinstance(a, FaceCoeffs):
            return not (np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v))
        if isinstance(a, np.ndarray):
            return not np.array_equal(a, b)
        if isinstance(a, SketchDocument):
            return a.to_json() != b.to_json()
        return a != b

    def _commit(self, before):
        after = self._capture()
        delta = {k: before[k] for k in before if self._changed(before[k], after[k])}
        if delta:
            self.undo_stack.append(delta)
            del self.undo_stack[:-UNDO_DEPTH]
            self.redo_stack.clear()

    def _apply_snapshot(self, delta):
        reverse = {}
        for k in delta:
            reverse[k] = self.sketch.copy() if k == "sketch" \
                else copy.deepcopy(getattr(self, k))
            setattr(self, k, delta[k])
        return reverse


# ---------------------------------------------------------------------------
# operations

def new_session(assets, start_mode="initial_sketching"):
    if start_mode not in MODES:
        raise SessionError(f"unknown mode {start_mode!r}; expected one of {MODES}")
    for attr in ("model", "encoder", "net", "template", "curves"):
        if getattr(assets, attr) is None:
            raise SessionError(f"missing model asset: {attr}")
    state = SessionState(assets, start_mode)
    if start_mode != "initial_sketching":
        # the template's projected curve handles form the starting sketch
        for name, category, pts, _f in project_curves(
                assets.template, assets.curves, assets.camera):
            if category == "wrinkle":
                state.sketch.wrinkles.append(np.asarray(pts, dtype=np.float64))
            else:
                state.sketch.lines[name].segments = [np.asarray(pts, dtype=np.float64)]
    return state


def switch_mode(state, mode):
    if mode not in MODES:
        raise SessionError(f"unknown mode {mode!r}; expected one of {MODES}")
    state._log("switch_mode", mode=mode)
    state.mode = mode
    return state


def _resample_stroke(points):
    points = np.asarray(points, dtype=np.float64)
    length = np.sqrt((np.diff(points, axis=0) ** 2).sum(axis=1)).sum()
    count = max(2, int(round(length / STROKE_SPACING_PX)) + 1)
    return resample_polyline(points, count)


def _snap_to_gap(stroke, gap_start, gap_end):
    """Blend the stroke's ends onto the gap endpoints; endpoints become
    bit-exact copies of the gap endpoints."""
    if np.linalg.norm(stroke[0] - gap_start) > np.linalg.norm(stroke[0] - gap_end):
        stroke = stroke[::-1].copy()
    n = len(stroke)
    k = max(1, int(round(SNAP_BLEND_FRACTION * n)))
    out = stroke.copy()
    off0 = gap_start - stroke[0]
    off1 = gap_end - stroke[-1]
    ramp = np.linspace(1.0, 0.0, k + 1)[:-1, None]
    out[:k] += ramp * off0
    out[n - k:] += ramp[::-1] * off1
    out[0] = gap_start.copy()
    out[-1] = gap_end.copy()
    return out


def _nearest_gap(doc, stroke):
    best = None
    for name, (g0, g1, idx) in doc.open_gaps().items():
        d = min(np.linalg.norm(stroke[0] - g0) + np.linalg.norm(stroke[-1] - g1),
                np.linalg.norm(stroke[0] - g1) + np.linalg.norm(stroke[-1] - g0)) / 2.0
        if best is None or d < best[1]:
            best = (name, d)
    if best is not None and best[1] <= GAP_PROXIMITY_PX:
        return best[0]
    return None


def _assign_initial_stroke(state, stroke):
    """Label a free stroke with the nearest template curve layout."""
    layout = project_curves(state.assets.template, state.assets.curves,
                            state.assets.camera)
    best_name, best_d = None, np.inf
    for name, category, pts, _f in layout:
        if category == "wrinkle":
            continue
        d = np.mean(np.min(np.linalg.norm(
            stroke[:, None, :] - pts[None, :, :], axis=2), axis=1))
        if d < best_d:
            best_name, best_d = name, d
    line = state.sketch.lines[best_name]
    line.segments = [stroke]
    line.gap = None
    return best_name


def apply_stroke(state, points):
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        state.notices.append("stroke ignored: fewer than 2 points")
        return state
    if np.any(points < 0) or np.any(points >= CANVAS_SIZE):
        raise SessionError("stroke leaves the canvas")
    before = state._capture()
    state._log("stroke", points=points.tolist())
    stroke = _resample_stroke(points)

    if state.mode == "initial_sketching":
        _assign_initial_stroke(state, stroke)
    else:
        gap_name = _nearest_gap(state.sketch, stroke)
        if gap_name is not None:
            line = state.sketch.lines[gap_name]
            g0, g1, insert_index = line.gap
            snapped = _snap_to_gap(stroke, g0, g1)
            if line.closed:
                arc = line.segments[0]
                line.segments = [np.vstack([arc, snapped[1:-1]])]
            else:
                line.segments.insert(insert_index, snapped)
            line.gap = None
        else:
            state.sketch.wrinkles.append(stroke)

    update_model(state, _log=False)
    state._commit(before)
    return state


def erase(state, target):
    before = state._capture()
    state._log("erase", kind=target.kind, name=target.name,
               index=target.index, span=target.span)
    doc = state.sketch

    if target.kind == "wrinkle":
        if target.index < len(doc.wrinkles):
            doc.wrinkles.pop(target.index)
            update_model(state, _log=False)
            state._commit(before)
        return state

    if target.kind == "feature":
        line = doc.lines[target.name]
        if not line.segments:
            return state
        i = min(target.index, len(line.segments) - 1)
        seg = line.segments.pop(i)
        if line.gap is None:
            line.gap = (seg[0].copy(), seg[-1].copy(), i)
        else:
            # widen the existing gap to a single connected span
            g0, g1, gi = line.gap
            if i < gi:
                line.gap = (seg[0].copy(), g1, i)
            else:
                line.gap = (g0, seg[-1].copy(), gi)
        update_model(state, _log=False)
        state._commit(before)
        return state

    if target.kind == "silhouette":
        line = doc.lines["silhouette"]
        if not line.segments:
            return state
        f0, f1 = target.span
        pts = line.segments[0]
        seg_len = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1))
        if line.closed:
            closing = np.linalg.norm(pts[0] - pts[-1])
            cum = np.concatenate([[0.0], np.cumsum(seg_len)])
            fr = cum / (cum[-1] + closing)
        else:
            cum = np.concatenate([[0.0], np.cumsum(seg_len)])
            fr = cum / cum[-1]
        if f0 <= f1:
            erased = (fr >= f0) & (fr <= f1)
        else:
            erased = (fr >= f0) | (fr <= f1)
        if erased.all():
            return state
        if line.closed:
            # rotate so the kept run is contiguous, leaving one open arc
            keep = np.where(~erased)[0]
            gaps_at = np.where(np.diff(keep) > 1)[0]
            start = keep[gaps_at[0] + 1] if gaps_at.size else keep[0]
            order = np.roll(np.arange(len(pts)), -start)
            arc = pts[order][~erased[order]]
            line.segments = [arc]
            line.closed = False
            line.gap = (arc[-1].copy(), arc[0].copy(), 0)
        else:
            # a second erase splits the arc; drop the shorter connector so
            # a single connected gap remains
            pieces = []
            keep = ~erased
            run = []
            for i, k in enumerate(keep):
                if k:
                    run.append(i)
                elif run:
                    pieces.append(np.array(run))
                    run = []
            if run:
                pieces.append(np.array(run))
            if not pieces:
                return state
            main = max(pieces, key=len)
            arc = pts[main]
            line.segments = [arc]
            line.gap = (arc[-1].copy(), arc[0].copy(), 0)
        update_model(state, _log=False)
        state._commit(before)
        return state

    raise SessionError(f"unknown erase target kind {target.kind!r}")


def _similarity_from_corners(p0, p1, q0, q1):
    """2D similarity mapping (p0, p1) onto (q0, q1); translation only when
    the source corners coincide."""
    pz = complex(*p1) - complex(*p0)
    if abs(pz) < 1e-12:
        t = q0 - p0
        return lambda pts: pts + t
    a = (complex(*q1) - complex(*q0)) / pz
    b = complex(*q0) - a * complex(*p0)

    def apply(pts):
        z = pts[:, 0] + 1j * pts[:, 1]
        w = a * z + b
        return np.stack([w.real, w.imag], axis=1)
    return apply


def sync_paired_contour(state, redrawn_name):
    if redrawn_name not in CONTOUR_PAIRS:
        raise SessionError(f"{redrawn_name!r} has no paired contour")
    partner = CONTOUR_PAIRS[redrawn_name]
    doc = state.sketch
    new_pts = doc.line_points(redrawn_name)
    old_pts = doc.line_points(partner)
    if new_pts is None or old_pts is None:
        return state
    before = state._capture()
    state._log("sync", name=redrawn_name)
    transform = _similarity_from_corners(old_pts[0], old_pts[-1],
                                         new_pts[0], new_pts[-1])
    moved = transform(old_pts)
    moved[0] = new_pts[0].copy()
    moved[-1] = new_pts[-1].copy()
    doc.lines[partner].segments = [moved]
    doc.lines[partner].gap = None
    update_model(state, _log=False)
    state._commit(before)
    return state


def _pixels_to_model_xy(camera, pixels):
    cx, cy = camera.center
    x = (pixels[:, 0] - cx) / camera.scale
    y = -(pixels[:, 1] - cy) / camera.scale
    return np.stack([x, y], axis=1)


def update_model(state, _log=True):
    """Inference (and, in follow-up mode, handle deformation) from the sketch."""
    if _log:
        state._log("update_model")
    assets = state.assets
    polys = state.sketch.polyline_map()
    if state.sketch.is_empty():
        return state

    raster = rasterize_polylines(state.sketch.all_polylines(),
                                 closed_names={"silhouette"})
    encoded = encode_shape(assets.encoder, polys, impute_missing=True)
    net = assets.net
    u, v = predict_coeffs(
        net,
        raster if net.config.uses_pixels else None,
        encoded.vector if net.config.uses_shape else None)
    state.coeffs = FaceCoeffs(u, v)
    recon = reconstruct(assets.model, state.coeffs)

    if state.mode == "followup_sketching":
        targets = targets_from_polylines(
            assets.curves, polys,
            reference=assets.template.with_vertices(recon), camera=assets.camera)
        if len(targets.indices):
            solver = assets.solver_cache.get(assets.template, targets.indices)
            xy = _pixels_to_model_xy(assets.camera, targets.pixels)
            state.vertices = solver.solve(xy, z_mode="preserve",
                                          rest_vertices=recon)
            proj = assets.camera.project(state.vertices[targets.indices])
            err = proj - targets.pixels
            state.last_handle_rms_px = float(
                np.sqrt((err ** 2).sum(axis=1).mean()))
        else:
            state.vertices = recon
    else:
        state.vertices = recon
    return state


def undo(state, _log=True):
    if _log:
        state._log("undo")
    if not state.undo_stack:
        return state
    delta = state.undo_stack.pop()
    state.redo_stack.append(state._apply_snapshot(delta))
    return state


def redo(state, _log=True):
    if _log:
        state._log("redo")
    if not state.redo_stack:
        return state
    delta = state.redo_stack.pop()
    state.undo_stack.append(state._apply_snapshot(delta))
    return state


def _points_in_polygon(points, polygon):
    from matplotlib.path import Path
    return Path(polygon, closed=True).contains_points(points)


def _deform_selection(state, handles, handle_targets, z_mode, use_roi=True):
    assets = state.assets
    roi = None
    if use_roi and len(state.roi) < assets.template.n:
        # a region selection may exclude some active handles; the solver
        # requires every handle to sit inside the ROI, so widen it
        roi = np.union1d(state.roi, np.asarray(handles))
        if len(roi) >= assets.template.n:
            roi = None
    solver = assets.solver_cache.get(assets.template, handles, roi=roi)
    state.vertices = solver.solve(handle_targets, z_mode=z_mode,
                                  rest_vertices=state.vertices)


def dispatch_gesture(state, points):
    if state.mode != "refinement":
        raise SessionError("gestures require refinement mode")
    points = np.asarray(points, dtype=np.float64)
    state._log("gesture", points=points.tolist())
    raster = rasterize_polylines([("gesture", points)])
    label, conf = state.assets.gesture_classifier.classify(raster)

    if label == "rejected":
        return GestureAction("rejected", label, conf), state
    if label == "arrow_left":
        undo(state, _log=False)
        return GestureAction("undo", label, conf), state
    if label == "arrow_right":
        redo(state, _log=False)
        return GestureAction("redo", label, conf), state

    before = state._capture()
    camera = state.assets.camera

    if label == "region":
        proj = camera.project(state.vertices)
        inside = _points_in_polygon(proj, points)
        roi = np.where(inside)[0]
        if roi.size == 0:
            roi = np.arange(state.assets.template.n)
        state.roi = roi
        handles = np.intersect1d(np.asarray(state.assets.curves.handle_indices()),
                                 roi)
        if handles.size:
            state.handles = handles
        state._commit(before)
        return GestureAction("set_roi", label, conf), state

    if label == "line":
        all_handles = np.asarray(state.assets.curves.handle_indices())
        narrowed = state.handles.size < all_handles.size
        if narrowed:
            disp_px = points[-1] - points[0]
            dxy = np.array([disp_px[0] / camera.scale, -disp_px[1] / camera.scale])
            targets = state.vertices[state.handles, :2] + dxy
            _deform_selection(state, state.handles, targets, "preserve")
            state._commit(before)
            return GestureAction("translate_xy", label, conf,
                                 vector=tuple(disp_px)), state
        # no explicit selection: treat as silhouette-based editing
        sil = state.assets.curves.silhouette
        proj = camera.project(state.vertices[sil])
        d = np.linalg.norm(proj[:, None, :] - points[None, :, :], axis=2)
        nearest = d.argmin(axis=1)
        close = d.min(axis=1) <= SILHOUETTE_EDIT_RADIUS_PX
        targets_px = proj.copy()
        targets_px[close] = points[nearest[close]]
        _deform_selection(state, np.asarray(sil),
                          _pixels_to_model_xy(camera, targets_px),
                          "preserve", use_roi=False)
        state._commit(before)
        return GestureAction("silhouette_edit", label, conf), state

    if label.startswith(("roll_up", "roll_down")):
        level = int(label.rsplit("_", 1)[1])
        sign = 1.0 if "up" in label else -1.0
        delta = BULGE_DELTAS_MM[level]
        normals = vertex_normals(state.assets.template.with_vertices(state.vertices))
        avg = normals[state.handles].mean(axis=0)
        avg /= max(np.linalg.norm(avg), 1e-12)
        targets = state.vertices[state.handles] + sign * delta * avg
        _deform_selection(state, state.handles, targets, "full")
        state._commit(before)
        kind = "bulge" if sign > 0 else "depress"
        return GestureAction(kind, label, conf, level=level), state

    raise SessionError(f"classifier produced unknown label {label!r}")


def replay_events(assets, events, start_mode="initial_sketching"):
    """Re-execute an event log against fresh assets; returns the final state."""
    state = new_session(assets, start_mode)
    expected = 1
    for e in events:
        if e["seq"] != expected:
            raise SessionError(
                f"event log gap: expected seq {expected}, got {e['seq']}")
        expected += 1
        op, args = e["op"], e["args"]
        if op == "stroke":
            apply_stroke(state, np.asarray(args["points"]))
        elif op == "erase":
            erase(state, EraseTarget(args["kind"], args["name"], args["index"],
                                     None if args["span"] is None
                                     else tuple(args["span"])))
        elif op == "sync":
            sync_paired_contour(state, args["name"])
        elif op == "gesture":
            dispatch_gesture(state, np.asarray(args["points"]))
        elif op == "update_model":
            update_model(state, _log=False)
            state._log("update_model")
        elif op == "undo":
            undo(state, _log=False)
            state._log("undo")
        elif op == "redo":
            redo(state, _log=False)
            state._log("redo")
        elif op == "switch_mode":
            state.mode = args["mode"]
            state._log("switch_mode", mode=args["mode"])
        else:
            raise SessionError(f"unknown event op {op!r}")
    return state

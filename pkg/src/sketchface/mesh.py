"""Triangle mesh container, OBJ round-tripping and curve-handle projection.

All meshes generated from one dataset share a single topology; vertex
positions are in millimeters.
"""

from dataclasses import dataclass, field

import numpy as np

CANVAS_SIZE = 256

FEATURE_NAMES = (
    "left_eyebrow", "right_eyebrow",
    "left_eye_upper", "left_eye_lower",
    "right_eye_upper", "right_eye_lower",
    "mouth_upper", "mouth_lower",
    "left_ear", "right_ear",
    "nose",
)


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    vertices: np.ndarray        # (n, 3) float64, millimeters
    triangles: np.ndarray       # (t, 3) int32
    topology_id: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError(f"triangles must be (t, 3), got {self.triangles.shape}")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle index out of range")
        if self.triangles.size and self.triangles.min() < 0:
            raise MeshError("negative triangle index")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")

    @property
    def n(self):
        return len(self.vertices)

    def with_vertices(self, vertices):
        return Mesh(vertices=np.asarray(vertices, dtype=np.float64),
                    triangles=self.triangles, topology_id=self.topology_id)


@dataclass
class CurveSet:
    """Predefined vertex-index curves on the shared topology.

    `silhouette` is one closed loop (closure implicit, no repeated index);
    `features` maps the 11 canonical feature names to open index sequences;
    eye and mouth contour pairs share exactly their two corner indices.
    """

    silhouette: np.ndarray                       # (k,) int
    features: dict = field(default_factory=dict)  # name -> (k,) int
    wrinkles: dict = field(default_factory=dict)  # name -> (k,) int

    def __post_init__(self):
        self.silhouette = np.asarray(self.silhouette, dtype=np.int32)
        self.features = {k: np.asarray(v, dtype=np.int32) for k, v in self.features.items()}
        self.wrinkles = {k: np.asarray(v, dtype=np.int32) for k, v in self.wrinkles.items()}

    def validate(self, n):
        if len(set(self.silhouette.tolist())) != len(self.silhouette):
            raise MeshError("silhouette loop repeats a vertex index")
        for name, seq in self.all_curves():
            if len(seq) < 2:
                raise MeshError(f"curve {name!r} too short")
            if seq.min() < 0 or seq.max() >= n:
                raise MeshError(f"curve {name!r} index out of range for n={n}")
        missing = [f for f in FEATURE_NAMES if f not in self.features]
        if missing:
            raise MeshError(f"missing feature curves: {missing}")
        for upper, lower in (("left_eye_upper", "left_eye_lower"),
                             ("right_eye_upper", "right_eye_lower"),
                             ("mouth_upper", "mouth_lower")):
            a, b = self.features[upper], self.features[lower]
            shared = set(a.tolist()) & set(b.tolist())
            if shared != {int(a[0]), int(a[-1])} or {int(b[0]), int(b[-1])} != shared:
                raise MeshError(f"{upper}/{lower} must share exactly their endpoints")

    def all_curves(self):
        yield "silhouette", self.silhouette
        for name, seq in self.features.items():
            yield name, seq
        for name, seq in self.wrinkles.items():
            yield name, seq

    def category(self, name):
        if name == "silhouette":
            return "silhouette"
        if name in self.features:
            return "feature"
        return "wrinkle"

    def handle_indices(self):
        """Unique silhouette + feature vertex indices, sorted."""
        idx = [self.silhouette] + [self.features[f] for f in FEATURE_NAMES]
        return np.unique(np.concatenate(idx))


def vertex_normals(mesh):
    """Area-weighted unit vertex normals; isolated vertices get +z."""
    v = mesh.vertices
    f = mesh.triangles
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    out = np.zeros_like(v)
    for c in range(3):
        np.add.at(out, f[:, c], fn)
    norms = np.linalg.norm(out, axis=1)
    bad = norms < 1e-12
    out[bad] = (0.0, 0.0, 1.0)
    norms[bad] = 1.0
    return out / norms[:, None]


# ---------------------------------------------------------------------------
# OBJ I/O

def load_obj(source):
    """Parse ASCII OBJ triangle geometry (``v``/``f`` records only)."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        with open(source, "r") as f:
            text = f.read()

    verts, tris = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as e:
                raise MeshError(f"line {lineno}: bad vertex coordinate: {e}") from None
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshError(f"line {lineno}: non-triangle face with {len(parts) - 1} vertices")
            tri = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise MeshError(f"line {lineno}: malformed index {token!r}") from None
                if i == 0:
                    raise MeshError(f"line {lineno}: OBJ indices are 1-based, got 0")
                tri.append(i - 1 if i > 0 else len(verts) + i)
            tris.append(tri)
    if not verts:
        raise MeshError("no vertices found")
    tris = np.asarray(tris, dtype=np.int32) if tris else np.zeros((0, 3), np.int32)
    if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
        raise MeshError("face references a vertex that does not exist")
    return Mesh(vertices=np.asarray(verts, dtype=np.float64), triangles=tris)


def save_obj(mesh, target=None):
    """Serialize to ASCII OBJ.  Returns bytes when `target` is None.

    Coordinates use repr-style shortest round-trip formatting, so
    save(load(x)) is byte-stable and positions survive to well below 1e-6 mm.
    """
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}")
    for a, b, c in mesh.triangles:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    data = ("\n".join(lines) + "\n").encode("utf-8")
    if target is None:
        return data
    if hasattr(target, "write"):
        target.write(data)
    else:
        with open(target, "wb") as f:
            f.write(data)
    return None


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# Orthographic frontal camera

@dataclass(frozen=True)
class Camera:
    """Orthographic frontal camera onto a CANVAS_SIZE^2 canvas.

    pixel = center + scale * (x, -y); z is ignored.  `scale` is pixels/mm.
    """

    scale: float = 1.0
    center: tuple = (CANVAS_SIZE / 2.0, CANVAS_SIZE / 2.0)

    def project(self, points):
        points = np.asarray(points, dtype=np.float64)
        px = self.center[0] + self.scale * points[..., 0]
        py = self.center[1] - self.scale * points[..., 1]
        return np.stack([px, py], axis=-1)


def project_curves(mesh, curve_set, camera):
    """Project every curve to labeled 2D polylines in pixel coordinates.

    Returns a list of (name, category, (k, 2) array, clipped_flag); points
    falling off the canvas are clamped into [0, CANVAS_SIZE) with the flag set.
    """
    out = []
    for name, seq in curve_set.all_curves():
        pts = camera.project(mesh.vertices[seq])
        clipped = bool(np.any(pts < 0) or np.any(pts >= CANVAS_SIZE))
        pts = np.clip(pts, 0.0, np.nextafter(float(CANVAS_SIZE), 0.0))
        out.append((name, curve_set.category(name), pts, clipped))
    return out

"""Procedural face template: a symmetric face-mask mesh with labeled curves.

The template is a structured grid mapped onto an elliptical disk with a
height field (dome + feature bumps).  Its regular indexing makes the curve
handles, the mirror map and the fixed eye/mouth region straightforward to
define.  Identities are smooth radial-basis deformations of the template;
expressions are displacement fields defined once on the template and
carried to other identities by deformation transfer.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import CurveSet, Mesh

FACE_HALF_WIDTH = 75.0     # mm
FACE_HALF_HEIGHT = 100.0   # mm, face height 200 mm total


@dataclass(frozen=True)
class TemplateConfig:
    vertex_budget: int = 1225
    topology_version: str = "face-grid-1"

    def grid_size(self):
        if self.vertex_budget < 500:
            raise ValueError("vertex budget must be >= 500")
        g = math.ceil(math.sqrt(self.vertex_budget))
        return g if g % 2 == 1 else g + 1


def _height_field(x, y):
    """Symmetric face relief: dome plus nose/brow/cheek/chin/lip bumps."""
    z = 35.0 * np.sqrt(np.clip(1.0 - (x / 85.0) ** 2 - (y / 112.0) ** 2, 0.0, None))

    def bump(amp, cx, cy, sx, sy):
        return amp * np.exp(-(((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2) / 2.0)

    z += bump(18.0, 0.0, 5.0, 8.0, 25.0)        # nose ridge
    z += bump(8.0, 0.0, -8.0, 8.0, 8.0)         # nose tip
    z += bump(5.0, -35.0, 38.0, 15.0, 8.0)      # brow ridges
    z += bump(5.0, 35.0, 38.0, 15.0, 8.0)
    z += bump(6.0, -45.0, -20.0, 20.0, 20.0)    # cheeks
    z += bump(6.0, 45.0, -20.0, 20.0, 20.0)
    z += bump(6.0, 0.0, -75.0, 18.0, 14.0)      # chin
    z += bump(4.0, 0.0, -47.0, 22.0, 10.0)      # lips
    return z


def generate_template(config=TemplateConfig()):
    """Build the shared-topology template mesh and its curve handles."""
    g = config.grid_size()
    r_idx, c_idx = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    u = -1.0 + 2.0 * c_idx / (g - 1)
    v = 1.0 - 2.0 * r_idx / (g - 1)             # row 0 is the top of the face
    # square-to-ellipse mapping keeps the grid boundary on the face outline
    x = FACE_HALF_WIDTH * u * np.sqrt(1.0 - v ** 2 / 2.0)
    y = FACE_HALF_HEIGHT * v * np.sqrt(1.0 - u ** 2 / 2.0)
    z = _height_field(x, y)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)

    tris = []
    for r in range(g - 1):
        for c in range(g - 1):
            a = r * g + c
            tris.append([a, a + g, a + 1])
            tris.append([a + 1, a + g, a + g + 1])
    mesh = Mesh(verts, tris, topology_id=f"{config.topology_version}-{g}")
    return mesh, _build_curves(g)


def _scale_rc(g):
    s = (g - 1) / 34.0

    def rc(r, c):
        return int(math.floor(r * s + 0.5)) * g + int(math.floor(c * s + 0.5))

    return rc


def _build_curves(g):
    rc = _scale_rc(g)

    def row_path(r, c0, c1):
        step = 1 if c1 >= c0 else -1
        return [rc(r, c) for c in range(c0, c1 + step, step)]

    def dedupe(seq):
        out = []
        for i in seq:
            if not out or out[-1] != i:
                out.append(i)
        return out

    silhouette = []
    for c in range(g):
        silhouette.append(c)                       # top row, left to right
    for r in range(1, g):
        silhouette.append(r * g + (g - 1))         # right column
    for c in range(g - 2, -1, -1):
        silhouette.append((g - 1) * g + c)         # bottom row
    for r in range(g - 2, 0, -1):
        silhouette.append(r * g)                   # left column

    def eye(c0, c1):
        corner_l, corner_r = rc(13, c0), rc(13, c1)
        upper = [corner_l] + row_path(12, c0 + 1, c1 - 1) + [corner_r]
        lower = [corner_l] + row_path(14, c0 + 1, c1 - 1) + [corner_r]
        return dedupe(upper), dedupe(lower)

    left_eye_u, left_eye_l = eye(6, 12)
    right_eye_u, right_eye_l = eye(22, 28)

    mouth_l, mouth_r = rc(25, 11), rc(25, 23)
    mouth_upper = dedupe([mouth_l] + row_path(24, 12, 22) + [mouth_r])
    mouth_lower = dedupe([mouth_l] + row_path(26, 12, 22) + [mouth_r])

    features = {
        "left_eyebrow": dedupe(row_path(9, 5, 13)),
        "right_eyebrow": dedupe(row_path(9, 21, 29)),
        "left_eye_upper": left_eye_u,
        "left_eye_lower": left_eye_l,
        "right_eye_upper": right_eye_u,
        "right_eye_lower": right_eye_l,
        "mouth_upper": mouth_upper,
        "mouth_lower": mouth_lower,
        "left_ear": dedupe([rc(14, 2), rc(15, 1), rc(16, 1), rc(17, 1), rc(18, 2)]),
        "right_ear": dedupe([rc(14, 32), rc(15, 33), rc(16, 33), rc(17, 33), rc(18, 32)]),
        "nose": dedupe([rc(r, 17) for r in range(13, 21)]
                       + [rc(21, 16), rc(21, 17), rc(21, 18)]),
    }
    wrinkles = {
        "lip_outer": dedupe([rc(25, 9)] + row_path(23, 10, 24) + [rc(25, 25)]
                            + row_path(27, 24, 10)),
        "forehead_1": dedupe(row_path(5, 12, 22)),
        "forehead_2": dedupe(row_path(7, 11, 23)),
        "nasolabial_left": dedupe([rc(21, 13), rc(22, 12), rc(23, 11), rc(24, 10)]),
        "nasolabial_right": dedupe([rc(21, 21), rc(22, 22), rc(23, 23), rc(24, 24)]),
    }
    return CurveSet(silhouette=silhouette, features=features, wrinkles=wrinkles)


def mirror_index_map(g):
    """Vertex permutation pairing each grid vertex with its x-mirror."""
    r, c = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    return (r * g + (g - 1 - c)).ravel()


def fixed_exaggeration_mask(mesh):
    """Vertices near the eyes and mouth, kept rigid during exaggeration."""
    v = mesh.vertices
    masks = []
    for cx, cy, radius in ((-35.0, 25.0, 18.0), (35.0, 25.0, 18.0), (0.0, -47.0, 25.0)):
        masks.append((v[:, 0] - cx) ** 2 + (v[:, 1] - cy) ** 2 <= radius ** 2)
    return np.nonzero(np.logical_or.reduce(masks))[0]


# ---------------------------------------------------------------------------
# Identities

_IDENTITY_SITES = (
    # (cx, cy, sigma, direction); mirrored pairs share one amplitude
    ("nose", (0.0, 0.0, 18.0), (0.0, 0.0, 1.0)),
    ("nose_len", (0.0, -12.0, 12.0), (0.0, -1.0, 0.0)),
    ("chin", (0.0, -80.0, 20.0), (0.0, -1.0, 0.6)),
    ("brow", (0.0, 40.0, 25.0), (0.0, 0.0, 1.0)),
    ("cheek", (45.0, -20.0, 22.0), (0.4, 0.0, 1.0)),
    ("jaw", (40.0, -60.0, 25.0), (1.0, -0.2, 0.0)),
    ("forehead", (0.0, 70.0, 30.0), (0.0, 0.3, 1.0)),
)


@dataclass
class IdentityParams:
    width_scale: float = 1.0
    height_scale: float = 1.0
    amplitudes: dict = field(default_factory=dict)   # site name -> mm

    @classmethod
    def zero(cls):
        return cls()


def sample_identity_params(rng):
    amps = {name: float(rng.normal(0.0, 3.0)) for name, _, _ in _IDENTITY_SITES}
    return IdentityParams(
        width_scale=float(np.clip(rng.normal(1.0, 0.05), 0.88, 1.12)),
        height_scale=float(np.clip(rng.normal(1.0, 0.04), 0.90, 1.10)),
        amplitudes=amps,
    )


def generate_identity(template_mesh, params=None, rng=None):
    """Neutral identity mesh: scaled template plus symmetric RBF bumps.

    With default (zero) parameters the template is returned exactly.
    """
    if params is None:
        params = sample_identity_params(rng) if rng is not None else IdentityParams.zero()
    v = template_mesh.vertices.copy()
    x, y = v[:, 0], v[:, 1]
    disp = np.zeros_like(v)
    for name, (cx, cy, sigma), direction in _IDENTITY_SITES:
        amp = params.amplitudes.get(name, 0.0)
        if amp == 0.0:
            continue
        d = np.asarray(direction, dtype=np.float64)
        for side in ((1.0,) if cx == 0.0 else (1.0, -1.0)):
            w = np.exp(-((x - side * cx) ** 2 + (y - cy) ** 2) / (2 * sigma ** 2))
            dd = d.copy()
            dd[0] *= side                           # mirror the x component
            disp += amp * w[:, None] * dd[None, :]
    v[:, 0] *= params.width_scale
    v[:, 1] *= params.height_scale
    v += disp
    return template_mesh.with_vertices(v)


# ---------------------------------------------------------------------------
# Expressions (displacement fields on the template)

def _expression_basis(vertices):
    x, y = vertices[:, 0], vertices[:, 1]

    def blob(cx, cy, sx, sy):
        return np.exp(-(((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2) / 2.0)

    fields = {}
    corners = blob(-26.0, -45.0, 10.0, 10.0) + blob(26.0, -45.0, 10.0, 10.0)
    fields["smile"] = np.stack([np.sign(x) * 0.4 * corners, corners, 0.2 * corners], axis=1)
    fields["jaw_open"] = np.stack(
        [np.zeros_like(x), -np.clip(-(y + 45.0) / 40.0, 0.0, 1.0) * (y < -40),
         np.zeros_like(x)], axis=1)
    brow = blob(-35.0, 40.0, 16.0, 10.0) + blob(35.0, 40.0, 16.0, 10.0)
    fields["brow_raise"] = np.stack([np.zeros_like(x), brow, 0.1 * brow], axis=1)
    inner = blob(-12.0, 36.0, 10.0, 8.0) + blob(12.0, 36.0, 10.0, 8.0)
    fields["furrow"] = np.stack([-np.sign(x) * 0.3 * inner, -inner, 0.2 * inner], axis=1)
    eyes = blob(-35.0, 25.0, 14.0, 8.0) + blob(35.0, 25.0, 14.0, 8.0)
    fields["squint"] = np.stack([np.zeros_like(x), -0.5 * eyes, -0.3 * eyes], axis=1)
    cheeks = blob(-45.0, -25.0, 18.0, 18.0) + blob(45.0, -25.0, 18.0, 18.0)
    fields["puff"] = np.stack([np.sign(x) * 0.3 * cheeks, np.zeros_like(x), cheeks], axis=1)
    lower_lip = blob(0.0, -55.0, 20.0, 10.0)
    fields["pout"] = np.stack([np.zeros_like(x), -0.6 * lower_lip, lower_lip], axis=1)
    left_corner = blob(-26.0, -45.0, 10.0, 10.0)
    fields["sneer"] = np.stack([-0.3 * left_corner, left_corner, 0.2 * left_corner], axis=1)
    return fields

# coefficient table for the canonical expression list; index 0 is neutral
_EXPRESSION_TABLE = (
    {},
    {"smile": 7.0},
    {"smile": -6.0, "furrow": 4.0},                 # frown
    {"jaw_open": 14.0},
    {"brow_raise": 6.0, "jaw_open": 8.0},           # surprise
    {"squint": 5.0, "smile": 4.0},                  # laugh
    {"pout": 6.0, "furrow": 3.0},                   # sad
    {"puff": 7.0},
    {"sneer": 6.0, "squint": 2.0},
    {"brow_raise": 5.0, "smile": -3.0, "pout": 3.0},  # worried
)


def expression_displacement(template_mesh, index, seed=2024):
    """Displacement field (n, 3) of expression `index`; index 0 is neutral."""
    if index == 0:
        return np.zeros_like(template_mesh.vertices)
    basis = _expression_basis(template_mesh.vertices)
    if index < len(_EXPRESSION_TABLE):
        table = _EXPRESSION_TABLE[index]
    else:
        rng = np.random.default_rng([seed, index])
        names = sorted(basis)
        picks = rng.choice(len(names), size=3, replace=False)
        table = {names[p]: float(rng.uniform(-8.0, 8.0)) for p in picks}
    disp = np.zeros_like(template_mesh.vertices)
    for name, coeff in table.items():
        disp += coeff * basis[name]
    return disp

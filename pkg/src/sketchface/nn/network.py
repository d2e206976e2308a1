"""Two-branch coefficient regression networks.

All variants share the same layout idea: an optional convolutional trunk
over the sketch raster, a wider identity branch (3 fully connected layers)
and a shallower expression branch (1 layer), optional shape-vector side
input, and swappable output heads so the same trunk serves classification
pre-training and coefficient regression.

Variants:
  pixel_shape   conv trunk + per-branch shape side input (the full model)
  pixel         conv trunk only
  pixel_nowrinkle  same architecture as pixel, trained on wrinkle-free rasters
  shape_only    no conv trunk; branches read the encoded shape vector
  pixel_single  conv trunk with one shared branch feeding both heads
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .layers import Conv2D, Dense, Flatten, MaxPool, ReLU, Sequential

VARIANTS = ("pixel_shape", "pixel", "pixel_nowrinkle", "shape_only", "pixel_single")

MAGIC = b"SFNET1\n"


@dataclass(frozen=True)
class NetConfig:
    variant: str = "pixel_shape"
    r_id: int = 50
    r_expr: int = 16
    n_identity_classes: int = 160
    n_expression_classes: int = 10
    shape_dim: int = 0
    image_size: int = 256
    fc_width: int = 1024
    shape_fc_width: int = 512

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; pick one of {VARIANTS}")
        if self.uses_shape and self.shape_dim <= 0:
            raise ValueError(f"variant {self.variant!r} needs shape_dim > 0")
        if self.uses_pixels and self.image_size < 32:
            raise ValueError("image_size too small for the conv trunk")

    @property
    def uses_pixels(self):
        return self.variant != "shape_only"

    @property
    def uses_shape(self):
        return self.variant in ("pixel_shape", "shape_only")

    @property
    def single_branch(self):
        return self.variant == "pixel_single"


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _trunk_flat_dim(image_size):
    s = _conv_out(image_size, 11, 4, 0)
    s = _conv_out(s, 3, 2, 0)
    s = _conv_out(s, 5, 1, 2)
    s = _conv_out(s, 3, 2, 0)
    s = _conv_out(s, 3, 1, 1)
    s = _conv_out(s, 3, 2, 0)
    return 16 * s * s


def _build_trunk(rng, image_size, fc_width):
    flat = _trunk_flat_dim(image_size)
    return Sequential([
        Conv2D(1, 32, 11, stride=4, rng=rng),
        ReLU(),
        MaxPool(3, 2),
        Conv2D(32, 64, 5, stride=1, pad=2, rng=rng),
        ReLU(),
        MaxPool(3, 2),
        Conv2D(64, 16, 3, stride=1, pad=1, rng=rng),
        ReLU(),
        MaxPool(3, 2),
        Flatten(),
        Dense(flat, fc_width, rng=rng),
        ReLU(),
    ])


def _mlp(rng, in_dim, width, depth):
    layers = []
    for i in range(depth):
        layers += [Dense(in_dim if i == 0 else width, width, rng=rng), ReLU()]
    return Sequential(layers)


class RegressionNet:
    """Holds the trunk, branch MLPs, shape side inputs and all four heads."""

    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        cfg = config

        self.trunk = _build_trunk(rng, cfg.image_size, cfg.fc_width) if cfg.uses_pixels else None

        if cfg.variant == "shape_only":
            branch_in = cfg.shape_fc_width
        else:
            branch_in = cfg.fc_width

        if cfg.single_branch:
            self.shared_mlp = _mlp(rng, branch_in, cfg.fc_width, 3)
            self.id_mlp = self.expr_mlp = None
        else:
            self.shared_mlp = None
            self.id_mlp = _mlp(rng, branch_in, cfg.fc_width, 3)
            self.expr_mlp = _mlp(rng, branch_in, cfg.fc_width, 1)

        if cfg.uses_shape:
            self.id_shape = Sequential([Dense(cfg.shape_dim, cfg.shape_fc_width, rng=rng), ReLU()])
            self.expr_shape = Sequential([Dense(cfg.shape_dim, cfg.shape_fc_width, rng=rng), ReLU()])
        else:
            self.id_shape = self.expr_shape = None

        head_in = cfg.fc_width
        if cfg.variant == "pixel_shape":
            head_in += cfg.shape_fc_width
        self._head_in = head_in
        self.heads = {
            "id_class": Dense(head_in, cfg.n_identity_classes, rng=rng),
            "expr_class": Dense(head_in, cfg.n_expression_classes, rng=rng),
            "id_reg": Dense(head_in, cfg.r_id, rng=rng),
            "expr_reg": Dense(head_in, cfg.r_expr, rng=rng),
        }
        self._fwd = None
        self._trunk_cached = False

    # the conv stack ends at the Flatten layer; the trailing Dense + ReLU of
    # the trunk stay trainable even when the conv weights are frozen
    _CONV_STACK_END = -2

    def conv_features(self, pixel):
        """Flattened output of the convolutional stack.

        While the conv weights are frozen this is constant per input, so
        callers may compute it once per sample and replay it through
        ``forward(conv_cache=...)`` instead of re-running the convolutions.
        """
        x = pixel
        for layer in self.trunk.layers[: self._CONV_STACK_END]:
            x = layer.forward(x)
        return x

    # ---- introspection ----------------------------------------------------

    def describe(self):
        cfg = self.config
        return {
            "variant": cfg.variant,
            "uses_pixels": cfg.uses_pixels,
            "uses_shape": cfg.uses_shape,
            "single_branch": cfg.single_branch,
            "identity_fc_layers": 3,
            "expression_fc_layers": 3 if cfg.single_branch else 1,
            "fc_width": cfg.fc_width,
            "head_input_dim": self._head_in,
            "head_dims": {k: h.b.shape[0] for k, h in self.heads.items()},
        }

    def _components(self):
        out = []
        if self.trunk is not None:
            out.append(("trunk", self.trunk))
        if self.shared_mlp is not None:
            out.append(("shared_mlp", self.shared_mlp))
        if self.id_mlp is not None:
            out.append(("id_mlp", self.id_mlp))
            out.append(("expr_mlp", self.expr_mlp))
        if self.id_shape is not None:
            out.append(("id_shape", self.id_shape))
            out.append(("expr_shape", self.expr_shape))
        return out

    def param_items(self, active_heads=None, freeze_conv=False):
        """(key, layer, param_name) triples for the optimizer."""
        items = []
        for comp_name, comp in self._components():
            for key, layer, name in comp.named_params(comp_name + "."):
                if freeze_conv and isinstance(layer, Conv2D):
                    continue
                items.append((key, layer, name))
        heads = self.heads if active_heads is None else {
            k: self.heads[k] for k in active_heads}
        for hname, head in heads.items():
            for name in head.params():
                items.append((f"head.{hname}.{name}", head, name))
        return items

    def param_count(self):
        return sum(layer.params()[name].size
                   for _, layer, name in self.param_items())

    # ---- forward / backward ----------------------------------------------

    def forward(self, pixel=None, shape=None, heads=("id_reg", "expr_reg"),
                train=False, conv_cache=None):
        cfg = self.config
        if cfg.uses_pixels and pixel is None and conv_cache is None:
            raise ValueError(f"variant {cfg.variant!r} requires a pixel input")
        if cfg.uses_shape and shape is None:
            raise ValueError(f"variant {cfg.variant!r} requires a shape input")

        if cfg.variant == "shape_only":
            fid = self.id_mlp.forward(self.id_shape.forward(shape, train), train)
            fex = self.expr_mlp.forward(self.expr_shape.forward(shape, train), train)
        else:
            if conv_cache is not None:
                t = conv_cache
                for layer in self.trunk.layers[self._CONV_STACK_END:]:
                    t = layer.forward(t, train=train)
                self._trunk_cached = True
            else:
                t = self.trunk.forward(pixel, train)
                self._trunk_cached = False
            if cfg.single_branch:
                f = self.shared_mlp.forward(t, train)
                fid = fex = f
            else:
                fid = self.id_mlp.forward(t, train)
                fex = self.expr_mlp.forward(t, train)
            if cfg.variant == "pixel_shape":
                fid = np.concatenate([fid, self.id_shape.forward(shape, train)], axis=1)
                fex = np.concatenate([fex, self.expr_shape.forward(shape, train)], axis=1)
        self._fwd = heads
        return (self.heads[heads[0]].forward(fid, train),
                self.heads[heads[1]].forward(fex, train))

    def backward(self, d_id, d_expr):
        cfg = self.config
        h_id, h_ex = self._fwd
        g_id = self.heads[h_id].backward(d_id)
        g_ex = self.heads[h_ex].backward(d_expr)

        if cfg.variant == "pixel_shape":
            w = cfg.fc_width
            self.id_shape.backward(g_id[:, w:])
            self.expr_shape.backward(g_ex[:, w:])
            g_id, g_ex = g_id[:, :w], g_ex[:, :w]

        if cfg.variant == "shape_only":
            self.id_shape.backward(self.id_mlp.backward(g_id))
            self.expr_shape.backward(self.expr_mlp.backward(g_ex))
            return
        if cfg.single_branch:
            dt = self.shared_mlp.backward(g_id + g_ex)
        else:
            dt = self.id_mlp.backward(g_id) + self.expr_mlp.backward(g_ex)
        if self._trunk_cached:
            # the conv-stack output came from a precomputed cache; only the
            # trainable tail of the trunk needs gradients
            for layer in reversed(self.trunk.layers[self._CONV_STACK_END:]):
                dt = layer.backward(dt)
        else:
            self.trunk.backward(dt)


def predict_coeffs(net, raster=None, shape_vector=None):
    """Run the regression heads on one sample; returns (u, v) float64 arrays."""
    pixel = None
    if raster is not None:
        pixel = np.ascontiguousarray(raster, dtype=np.float32).reshape(
            1, 1, *raster.shape)
    shape = None
    if shape_vector is not None:
        shape = np.asarray(shape_vector, dtype=np.float32).reshape(1, -1)
    out_u, out_v = net.forward(pixel=pixel, shape=shape)
    return out_u[0].astype(np.float64), out_v[0].astype(np.float64)


# ---- checkpoints ----------------------------------------------------------

def _all_named(net):
    items = net.param_items()
    seen = {}
    for key, layer, name in items:
        seen[key] = layer.params()[name]
    return seen


def save_weights(net, path):
    named = _all_named(net)
    meta = json.dumps({"config": net.config.__dict__, "n_params": len(named)}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        for key in sorted(named):
            arr = named[key]
            kb = key.encode()
            f.write(struct.pack("<H", len(kb)))
            f.write(kb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=np.float32).tobytes())


def load_weights(path):
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        (mlen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(mlen))
        net = RegressionNet(NetConfig(**meta["config"]))
        named = _all_named(net)
        for _ in range(meta["n_params"]):
            (klen,) = struct.unpack("<H", f.read(2))
            key = f.read(klen).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            data = np.frombuffer(f.read(4 * int(np.prod(shape))), dtype=np.float32)
            if key not in named or named[key].shape != shape:
                raise ValueError(f"{path}: unexpected parameter {key} {shape}")
            named[key][...] = data.reshape(shape)
    return net

"""Gesture stroke classification.

Ten stroke classes drive the refinement mode: a straight line, a closed
region, left/right arrows, and curled roll strokes (one to three loops,
curling up or down).  Low-confidence or empty inputs are rejected rather
than guessed.
"""

import struct

import numpy as np

from ..curves2d import rasterize_polylines, resample_polyline, smooth_offsets
from ..mesh import CANVAS_SIZE
from .layers import (
    Conv2D, Dense, Flatten, MaxPool, ReLU, Sequential, softmax,
    softmax_cross_entropy,
)
from .network import _trunk_flat_dim
from .train import SGD, TrainError

GESTURE_LABELS = (
    "line", "region", "arrow_left", "arrow_right",
    "roll_up_1", "roll_up_2", "roll_up_3",
    "roll_down_1", "roll_down_2", "roll_down_3",
)
REJECTED = "rejected"
CONFIDENCE_FLOOR = 0.5


class GestureClassifier:
    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        flat = _trunk_flat_dim(CANVAS_SIZE)
        self.net = Sequential([
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
            Dense(flat, 256, rng=rng),
            ReLU(),
            Dense(256, len(GESTURE_LABELS), rng=rng),
        ])

    def logits(self, rasters):
        x = np.ascontiguousarray(rasters, dtype=np.float32)
        if x.ndim == 3:
            x = x[:, None, :, :]
        return self.net.forward(x)

    def classify(self, raster):
        """Returns (label, confidence); blank or uncertain input is rejected."""
        if raster.shape != (CANVAS_SIZE, CANVAS_SIZE):
            raise ValueError(f"expected {CANVAS_SIZE}x{CANVAS_SIZE} raster, got {raster.shape}")
        if not raster.any():
            return REJECTED, 0.0
        p = softmax(self.logits(raster[None]).astype(np.float64))[0]
        k = int(np.argmax(p))
        conf = float(p[k])
        if conf < CONFIDENCE_FLOOR:
            return REJECTED, conf
        return GESTURE_LABELS[k], conf


# ---- synthetic strokes -----------------------------------------------------

def _jitter(points, rng, scale=1.5):
    return points + smooth_offsets(rng, len(points), scale)


def gesture_polyline(label, rng):
    c = CANVAS_SIZE
    if label == "line":
        while True:
            a = rng.uniform(30, c - 30, size=2)
            b = rng.uniform(30, c - 30, size=2)
            if np.linalg.norm(b - a) > 70:
                break
        pts = np.linspace(a, b, 64)
    elif label == "region":
        center = rng.uniform(80, c - 80, size=2)
        radii = rng.uniform(25, 60, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        t = np.linspace(0, 2 * np.pi, 96, endpoint=False)
        pts = np.stack([center[0] + radii[0] * np.cos(t + phase),
                        center[1] + radii[1] * np.sin(t + phase)], axis=1)
        pts = np.vstack([pts, pts[:1]])
    elif label in ("arrow_left", "arrow_right"):
        tip_x = rng.uniform(50, 90)
        tip = np.array([tip_x, rng.uniform(80, c - 80)])
        arm = rng.uniform(45, 70)
        spread = rng.uniform(25, 45)
        upper = tip + [arm, -spread]
        lower = tip + [arm, spread]
        pts = np.vstack([np.linspace(upper, tip, 32),
                         np.linspace(tip, lower, 32)[1:]])
        if label == "arrow_right":
            pts[:, 0] = c - pts[:, 0]
    else:
        direction, turns = label.rsplit("_", 2)[-2:]
        k = int(turns)
        r = rng.uniform(14, 22)
        drift = r * rng.uniform(0.28, 0.4)
        t = np.linspace(0, 2 * np.pi * k, 48 * k)
        x0 = rng.uniform(40, c - 40 - drift * t[-1])
        y0 = rng.uniform(70, c - 70)
        y_sign = -1.0 if direction == "up" else 1.0
        pts = np.stack([x0 + drift * t + r * np.sin(t),
                        y0 + y_sign * r * np.cos(t)], axis=1)
    pts = resample_polyline(pts, max(48, len(pts)))
    return np.clip(_jitter(pts, rng), 1, c - 2)


def gesture_raster(label, rng):
    return rasterize_polylines([("g", gesture_polyline(label, rng))], CANVAS_SIZE)


def build_gesture_set(n_per_class, seed=0):
    rasters, labels = [], []
    for k, label in enumerate(GESTURE_LABELS):
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, 6, k, i])
            rasters.append(gesture_raster(label, rng))
            labels.append(k)
    return np.stack(rasters), np.array(labels)


def train_gesture_classifier(n_per_class=40, iters=400, batch_size=16,
                             lr=5e-3, momentum=0.9, seed=0, progress=None):
    clf = GestureClassifier(seed=seed)
    rasters, labels = build_gesture_set(n_per_class, seed=seed)
    x = rasters.astype(np.float32)[:, None, :, :]
    rng = np.random.default_rng([seed, 7])
    opt = SGD(clf.net.named_params(), lr, momentum, weight_decay=1e-4)
    for it in range(1, iters + 1):
        idx = rng.integers(0, len(labels), size=batch_size)
        logits = clf.net.forward(x[idx], train=True)
        loss, dlogits = softmax_cross_entropy(logits, labels[idx])
        if not np.isfinite(loss):
            raise TrainError(f"non-finite gesture loss at iteration {it}")
        clf.net.backward(dlogits)
        opt.step()
        if progress is not None and it % 20 == 0:
            progress(it, loss)
    return clf


GESTURE_MAGIC = b"SFGEST1\n"


def save_gesture_classifier(clf, path):
    items = clf.net.named_params()
    with open(path, "wb") as f:
        f.write(GESTURE_MAGIC)
        f.write(struct.pack("<I", len(items)))
        for key, layer, name in items:
            arr = layer.params()[name]
            kb = key.encode()
            f.write(struct.pack("<H", len(kb)))
            f.write(kb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=np.float32).tobytes())


def load_gesture_classifier(path):
    clf = GestureClassifier()
    named = {key: (layer, name) for key, layer, name in clf.net.named_params()}
    with open(path, "rb") as f:
        if f.read(len(GESTURE_MAGIC)) != GESTURE_MAGIC:
            raise ValueError(f"{path}: not a gesture checkpoint")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (klen,) = struct.unpack("<H", f.read(2))
            key = f.read(klen).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            data = np.frombuffer(f.read(4 * int(np.prod(shape))), dtype=np.float32)
            layer, name = named[key]
            if layer.params()[name].shape != shape:
                raise ValueError(f"{path}: unexpected shape for {key}")
            layer.params()[name][...] = data.reshape(shape)
    return clf


def gesture_accuracy(clf, rasters, labels, batch_size=32):
    hits = 0
    for start in range(0, len(labels), batch_size):
        sl = slice(start, start + batch_size)
        pred = np.argmax(clf.logits(rasters[sl].astype(np.float32)), axis=1)
        hits += int((pred == labels[sl]).sum())
    return hits / len(labels)

"""Three-phase SGD training for the coefficient regression networks.

Phase 1 pre-trains both branches as classifiers (identity id, expression id)
with softmax cross-entropy.  Phase 2 swaps in the regression heads and fits
the coefficient targets directly, with the convolutional weights frozen.
Phase 3 unfreezes everything and minimizes the weighted vertex-space loss
through the bilinear reconstruction.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ..dataset import raster_without_wrinkles
from .layers import softmax_cross_entropy
from .loss import VertexLossSpec, curve_vertex_weights, vertex_loss
from .network import NetConfig, RegressionNet


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainSchedule:
    # desk-scale defaults: 1/100 of the full-scale 500k/800k/500k iterations
    phase_iters: tuple = (5000, 8000, 5000)
    phase_lrs: tuple = (1e-3, 1e-5, 1e-5)
    batch_size: int = 50
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if len(self.phase_iters) != 3 or len(self.phase_lrs) != 3:
            raise ValueError("schedule needs exactly three phases")


class SGD:
    def __init__(self, items, lr, momentum, weight_decay):
        self.items = items
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.vel = {key: np.zeros_like(layer.params()[name])
                    for key, layer, name in items}

    def step(self):
        for key, layer, name in self.items:
            p = layer.params()[name]
            g = layer.grads()[name] + self.weight_decay * p
            v = self.vel[key]
            v *= self.momentum
            v -= (self.lr * g).astype(v.dtype)
            p += v


@dataclass
class TrainResult:
    net: RegressionNet
    history: list          # (phase, iteration, loss) rows
    phase_final: dict      # phase -> mean loss over the last 10 recorded steps

    def save_history(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["phase", "iteration", "loss"])
            w.writerows(self.history)


def _entry_inputs(dataset, variant):
    """Per-entry network inputs as float32 arrays."""
    strip = variant == "pixel_nowrinkle"
    pixels = None
    if variant != "shape_only":
        rasters = [raster_without_wrinkles(sk) if strip else sk.raster
                   for sk in dataset.sketches]
        pixels = np.stack(rasters).astype(np.float32)[:, None, :, :]
    shapes = dataset.shape_vectors.astype(np.float32)
    return pixels, shapes


def _batch(net, pixels, shapes, idx, train):
    px = pixels[idx] if pixels is not None else None
    sh = shapes[idx] if net.config.uses_shape else None
    return px, sh


def net_config_for(dataset, variant, fc_width=1024):
    return NetConfig(
        variant=variant,
        r_id=dataset.model.core.shape[1],
        r_expr=dataset.model.core.shape[2],
        n_identity_classes=dataset.config.n_identities,
        n_expression_classes=dataset.config.n_expressions,
        shape_dim=dataset.shape_vectors.shape[1],
        fc_width=fc_width,
    )


def train_network(dataset, config, schedule=None, net=None, log_every=10,
                  progress=None, on_phase_end=None):
    """Train one network variant on a built dataset; returns a TrainResult.

    `on_phase_end(phase, net)`, if given, runs after each phase completes,
    e.g. to score intermediate checkpoints on a held-out split.
    """
    schedule = schedule or TrainSchedule()
    if net is None:
        net = RegressionNet(config, seed=schedule.seed)
    rng = np.random.default_rng([schedule.seed, 5])

    pixels, shapes = _entry_inputs(dataset, config.variant)
    train_idx = dataset.split_indices("train")
    grid_idx = np.array([j for j in train_idx if dataset.entries[j].kind == "grid"])
    ident_labels = np.array([dataset.entries[j].ident for j in grid_idx])
    expr_labels = np.array([dataset.entries[j].expr for j in grid_idx])

    coeff_u = dataset.coeffs[:, :config.r_id].astype(np.float64)
    coeff_v = dataset.coeffs[:, config.r_id:].astype(np.float64)
    weights = curve_vertex_weights(dataset.n_vertices,
                                   dataset.curves.handle_indices())

    history = []
    phase_final = {}

    def record(phase, it, loss):
        if not np.isfinite(loss):
            raise TrainError(
                f"non-finite loss in phase {phase} at iteration {it} "
                f"(lr={schedule.phase_lrs[phase - 1]}, batch={schedule.batch_size})")
        if it % log_every == 0 or it == 1:
            history.append((phase, it, loss))
            if progress is not None:
                progress(phase, it, loss)

    def finish(phase):
        tail = [l for p, _, l in history if p == phase][-10:]
        phase_final[phase] = float(np.mean(tail)) if tail else float("nan")
        if on_phase_end is not None:
            on_phase_end(phase, net)

    # ---- phase 1: identity / expression classification --------------------
    lr = schedule.phase_lrs[0]
    opt = SGD(net.param_items(active_heads=("id_class", "expr_class")),
              lr, schedule.momentum, schedule.weight_decay)
    for it in range(1, schedule.phase_iters[0] + 1):
        pick = rng.integers(0, len(grid_idx), size=schedule.batch_size)
        idx = grid_idx[pick]
        px, sh = _batch(net, pixels, shapes, idx, True)
        out_id, out_ex = net.forward(px, sh, heads=("id_class", "expr_class"),
                                     train=True)
        l1, d_id = softmax_cross_entropy(out_id, ident_labels[pick])
        l2, d_ex = softmax_cross_entropy(out_ex, expr_labels[pick])
        net.backward(d_id, d_ex)
        opt.step()
        record(1, it, l1 + l2)
    finish(1)

    # ---- phase 2: coefficient regression, conv weights frozen --------------
    lr = schedule.phase_lrs[1]
    opt = SGD(net.param_items(active_heads=("id_reg", "expr_reg"),
                              freeze_conv=True),
              lr, schedule.momentum, schedule.weight_decay)
    # with the conv weights frozen, the conv-stack output of each entry is
    # constant; computing it once makes every iteration a few dense products
    conv_cache = None
    if pixels is not None:
        conv_cache = np.concatenate(
            [net.conv_features(pixels[i:i + 64])
             for i in range(0, len(pixels), 64)], axis=0)
    for it in range(1, schedule.phase_iters[1] + 1):
        idx = rng.choice(train_idx, size=schedule.batch_size)
        _, sh = _batch(net, pixels, shapes, idx, True)
        out_u, out_v = net.forward(
            None, sh, train=True,
            conv_cache=None if conv_cache is None else conv_cache[idx])
        ru = out_u.astype(np.float64) - coeff_u[idx]
        rv = out_v.astype(np.float64) - coeff_v[idx]
        loss = float((ru * ru).sum() + (rv * rv).sum()) / len(idx)
        net.backward((2.0 * ru / len(idx)).astype(out_u.dtype),
                     (2.0 * rv / len(idx)).astype(out_v.dtype))
        opt.step()
        record(2, it, loss)
    finish(2)

    # ---- phase 3: vertex-space loss, everything trainable ------------------
    lr = schedule.phase_lrs[2]
    opt = SGD(net.param_items(active_heads=("id_reg", "expr_reg")),
              lr, schedule.momentum, schedule.weight_decay)
    core = dataset.model.core
    for it in range(1, schedule.phase_iters[2] + 1):
        idx = rng.choice(train_idx, size=schedule.batch_size)
        px, sh = _batch(net, pixels, shapes, idx, True)
        out_u, out_v = net.forward(px, sh, train=True)
        total = 0.0
        du = np.zeros_like(out_u, dtype=np.float64)
        dv = np.zeros_like(out_v, dtype=np.float64)
        for b, j in enumerate(idx):
            spec = VertexLossSpec(core, dataset.entry_vertices(j), weights)
            e, gu, gv = vertex_loss(spec, out_u[b], out_v[b])
            total += e
            du[b], dv[b] = gu, gv
        loss = total / len(idx)
        net.backward((du / len(idx)).astype(out_u.dtype),
                     (dv / len(idx)).astype(out_v.dtype))
        opt.step()
        record(3, it, loss)
    finish(3)

    return TrainResult(net=net, history=history, phase_final=phase_final)


def mean_coeff_vertex_error(dataset, net, indices=None):
    """Mean over entries of the unweighted vertex loss at predicted coeffs."""
    pixels, shapes = _entry_inputs(dataset, net.config.variant)
    if indices is None:
        indices = np.arange(len(dataset.entries))
    w = np.ones(dataset.n_vertices)
    core = dataset.model.core
    errs = []
    for j in indices:
        px, sh = _batch(net, pixels, shapes, np.array([j]), False)
        out_u, out_v = net.forward(px, sh)
        spec = VertexLossSpec(core, dataset.entry_vertices(j), w)
        e, _, _ = vertex_loss(spec, out_u[0].astype(np.float64),
                              out_v[0].astype(np.float64))
        errs.append(e)
    return float(np.mean(errs))

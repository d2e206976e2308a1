"""Command line entry points.

Configuration comes from an optional TOML file; individual flags override
file values.  Exit codes: 0 success, 1 any failure, 2 reserved for the
evaluation quality gate.
"""

import json
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:            # 3.10
    import tomli as tomllib

from .ablation import ALL_LABELS, AblationConfig, run_ablation
from .bilinear import FaceCoeffs, reconstruct
from .dataset import DatasetConfig, build_dataset, load_dataset, save_dataset
from .mesh import save_obj
from .nn.gesture import load_gesture_classifier, save_gesture_classifier, \
    train_gesture_classifier
from .nn.network import load_weights, predict_coeffs, save_weights
from .nn.train import TrainSchedule, net_config_for, train_network
from .render import RenderOptions
from .session import SessionAssets, replay_events
from .shape_encoder import encode_shape


def _load_config(path, section):
    if path is None:
        return {}
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    return doc.get(section, {})


def _dataset_config(cfg, seed):
    render = RenderOptions(**cfg.pop("render", {}))
    if seed is not None:
        cfg["seed"] = seed
    known = {f for f in DatasetConfig.__dataclass_fields__}
    bad = set(cfg) - known
    if bad:
        raise click.ClickException(f"unknown dataset options: {sorted(bad)}")
    for key in ("exagg_scales",):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    return DatasetConfig(render=render, **cfg)


def _schedule(cfg, overrides):
    merged = dict(cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("phase_iters", "phase_lrs"):
        if key in merged and isinstance(merged[key], str):
            parts = merged[key].split(",")
            cast = int if key == "phase_iters" else float
            merged[key] = tuple(cast(p) for p in parts)
        elif key in merged:
            merged[key] = tuple(merged[key])
    return TrainSchedule(**merged)


@click.group()
def main():
    """Sketch-driven 3D face modeling toolkit."""


@main.command("build-dataset")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
def build_dataset_cmd(config, out, seed):
    """Generate the synthetic face dataset and write it to a directory."""
    cfg = _dataset_config(_load_config(config, "dataset"), seed)
    ds = build_dataset(cfg)
    manifest = save_dataset(ds, out)
    click.echo(f"wrote {len(ds.entries)} entries to {out}")
    click.echo(f"content_hash {manifest['content_hash']}")


@main.command("train")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--variant", default="pixel_shape")
@click.option("--fc-width", type=int, default=None)
@click.option("--phase-iters", default=None, help="e.g. 5000,8000,5000")
@click.option("--phase-lrs", default=None, help="e.g. 1e-3,1e-5,1e-9")
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--history", type=click.Path(), default=None)
def train_cmd(config, dataset_dir, variant, fc_width, phase_iters, phase_lrs,
              batch_size, seed, out, history):
    """Train one regression network variant and write its checkpoint."""
    file_cfg = _load_config(config, "train")
    fc = fc_width or file_cfg.pop("fc_width", 1024)
    file_cfg.pop("variant", None)
    schedule = _schedule(file_cfg, {"phase_iters": phase_iters,
                                    "phase_lrs": phase_lrs,
                                    "batch_size": batch_size, "seed": seed})
    ds = load_dataset(dataset_dir)
    net_cfg = net_config_for(ds, variant, fc_width=fc)

    def progress(phase, it, loss):
        click.echo(f"phase {phase} iter {it} loss {loss:.6g}")

    result = train_network(ds, net_cfg, schedule, progress=progress,
                           log_every=max(1, schedule.phase_iters[0] // 20 or 1))
    save_weights(result.net, out)
    if history:
        result.save_history(history)
    for phase, loss in sorted(result.phase_final.items()):
        click.echo(f"phase {phase} final loss {loss:.6g}")
    click.echo(f"wrote checkpoint {out}")


@main.command("train-gestures")
@click.option("--samples-per-class", type=int, default=100)
@click.option("--iters", type=int, default=1500)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def train_gestures_cmd(samples_per_class, iters, seed, out):
    """Train the gesture stroke classifier on synthetic strokes."""
    clf = train_gesture_classifier(n_per_class=samples_per_class, iters=iters,
                                   seed=seed,
                                   progress=lambda it, l: click.echo(
                                       f"iter {it} loss {l:.4f}"))
    save_gesture_classifier(clf, out)
    click.echo(f"wrote gesture checkpoint {out}")


@main.command("evaluate")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--variants", default="all",
              help='"all" or a comma-separated subset')
@click.option("--fc-width", type=int, default=None)
@click.option("--phase-iters", default=None)
@click.option("--phase-lrs", default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--eval-limit", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@click.option("--gate-ratio", type=float, default=0.5,
              help="fail (exit 2) unless some trained variant beats "
                   "gate_ratio * mean-face error; <= 0 disables the gate")
def evaluate_cmd(config, dataset_dir, variants, fc_width, phase_iters,
                 phase_lrs, batch_size, seed, eval_limit, out, gate_ratio):
    """Train and compare all method variants; write the report bundle."""
    file_cfg = _load_config(config, "evaluate")
    labels = ALL_LABELS if variants == "all" else tuple(variants.split(","))
    schedule = _schedule(file_cfg.pop("schedule", {}),
                         {"phase_iters": phase_iters, "phase_lrs": phase_lrs,
                          "batch_size": batch_size, "seed": seed})
    cfg = AblationConfig(schedule=schedule,
                         fc_width=fc_width or file_cfg.pop("fc_width", 1024),
                         labels=labels,
                         eval_limit=eval_limit)
    ds = load_dataset(dataset_dir)
    report = run_ablation(ds, cfg, progress=lambda label: click.echo(f"scoring {label}"))
    paths = report.render(out)
    click.echo(report.text_table(), nl=False)
    click.echo(f"report hash {report.content_hash()}")
    for p in paths:
        click.echo(f"wrote {p}")

    if gate_ratio > 0:
        trained = [r.mean_error_mm for r in report.rows if r.label != "mm_fit"]
        if trained and min(trained) > gate_ratio * report.baseline_error_mm:
            click.echo("quality gate failed: no variant beats "
                       f"{gate_ratio} x mean-face error", err=True)
            sys.exit(2)


@main.command("infer")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--net", "net_path", type=click.Path(exists=True), required=True)
@click.option("--sketch", type=click.Path(exists=True), required=True,
              help="JSON file mapping curve names to [x, y] point lists")
@click.option("--out", type=click.Path(), required=True)
def infer_cmd(dataset_dir, net_path, sketch, out):
    """Map one sketch file to a 3D face mesh (OBJ)."""
    ds = load_dataset(dataset_dir)
    net = load_weights(net_path)
    with open(sketch) as f:
        polylines = {name: np.asarray(pts, dtype=np.float64)
                     for name, pts in json.load(f).items()}
    from .curves2d import rasterize_polylines
    raster = rasterize_polylines(list(polylines.items()),
                                 closed_names={"silhouette"})
    encoded = encode_shape(ds.encoder, polylines, impute_missing=True)
    u, v = predict_coeffs(net,
                          raster if net.config.uses_pixels else None,
                          encoded.vector if net.config.uses_shape else None)
    mesh = ds.template.with_vertices(
        reconstruct(ds.model, FaceCoeffs(u, v)))
    save_obj(mesh, out)
    click.echo(f"wrote {out} ({mesh.n} vertices)")
    if encoded.imputed:
        click.echo(f"imputed missing curves: {', '.join(encoded.imputed)}")


@main.command("replay")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--net", "net_path", type=click.Path(exists=True), required=True)
@click.option("--gestures", "gesture_path", type=click.Path(exists=True), default=None)
@click.option("--log", "log_path", type=click.Path(exists=True), required=True)
@click.option("--mode", default="followup_sketching")
@click.option("--out", type=click.Path(), default=None)
def replay_cmd(dataset_dir, net_path, gesture_path, log_path, mode, out):
    """Re-execute a recorded event log and print the final state hash."""
    assets = _make_assets(dataset_dir, net_path, gesture_path)
    with open(log_path) as f:
        events = [json.loads(line) for line in f if line.strip()]
    state = replay_events(assets, events, mode)
    click.echo(f"replayed {len(events)} events")
    click.echo(f"state_hash {state.state_hash()}")
    if out:
        mesh = assets.template.with_vertices(state.vertices)
        save_obj(mesh, out)
        click.echo(f"wrote {out}")


def _make_assets(dataset_dir, net_path, gesture_path=None):
    ds = load_dataset(dataset_dir)
    net = load_weights(net_path)
    classifier = load_gesture_classifier(gesture_path) if gesture_path else None
    return SessionAssets(model=ds.model, encoder=ds.encoder, net=net,
                         template=ds.template, curves=ds.curves,
                         gesture_classifier=classifier)


@main.command("serve")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--net", "net_path", type=click.Path(exists=True), required=True)
@click.option("--gestures", "gesture_path", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", envvar="SKETCHFACE_HOST")
@click.option("--port", type=int, default=8642, envvar="SKETCHFACE_PORT")
@click.option("--mode", default="followup_sketching")
def serve_cmd(dataset_dir, net_path, gesture_path, host, port, mode):
    """Start the local editing service."""
    from .service import serve
    click.echo(f"serving on {host}:{port}")
    serve(lambda: _make_assets(dataset_dir, net_path, gesture_path),
          host=host, port=port, default_mode=mode)


if __name__ == "__main__":
    main()

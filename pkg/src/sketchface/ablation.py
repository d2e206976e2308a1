"""Variant comparison harness.

Trains every regression-network variant plus the direct-fitting baseline on
one dataset, scores each on the held-out split with the normalized mean
vertex error, and renders the comparison as JSON, a delimited text table,
and figures.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bilinear import FaceCoeffs, reconstruct
from .fitting import mean_vertex_error, mm_fit, targets_from_polylines
from .nn.network import VARIANTS
from .nn.train import (
    TrainSchedule, _batch, _entry_inputs, net_config_for, train_network,
)
from .render import DEFAULT_CAMERA

BASELINE_LABEL = "mm_fit"
ALL_LABELS = (BASELINE_LABEL,) + VARIANTS


@dataclass(frozen=True)
class AblationConfig:
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    fc_width: int = 1024
    labels: tuple = ALL_LABELS
    eval_limit: int = 0          # 0 = score the whole test split

    def __post_init__(self):
        bad = set(self.labels) - set(ALL_LABELS)
        if bad:
            raise ValueError(f"unknown ablation labels {sorted(bad)}")


@dataclass
class AblationRow:
    label: str
    mean_error_mm: float


@dataclass
class AblationReport:
    rows: list
    baseline_error_mm: float     # predicting the train-split mean face
    n_test: int
    histories: dict              # label -> training history rows

    def ordering(self):
        return [r.label for r in sorted(self.rows, key=lambda r: r.mean_error_mm)]

    def to_json(self):
        return {
            "rows": [{"label": r.label, "mean_error_mm": r.mean_error_mm}
                     for r in self.rows],
            "mean_face_error_mm": self.baseline_error_mm,
            "n_test": self.n_test,
            "ordering": self.ordering(),
        }

    def content_hash(self):
        payload = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def text_table(self):
        lines = ["label\tmean_error_mm"]
        for r in self.rows:
            lines.append(f"{r.label}\t{r.mean_error_mm:.6f}")
        lines.append(f"mean_face\t{self.baseline_error_mm:.6f}")
        return "\n".join(lines) + "\n"

    def render(self, out_dir):
        """Write report.json, report.txt and the comparison figures."""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = self.to_json()
        doc["content_hash"] = self.content_hash()
        (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
        (out / "report.txt").write_text(self.text_table())

        fig, ax = plt.subplots(figsize=(7, 4))
        labels = [r.label for r in self.rows]
        errs = [r.mean_error_mm for r in self.rows]
        ax.bar(labels, errs, color="#4878a8")
        ax.axhline(self.baseline_error_mm, color="#b04030", linestyle="--",
                   label="mean face")
        ax.set_ylabel("mean vertex error (mm)")
        ax.tick_params(axis="x", rotation=30)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "errors.png", dpi=120)
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(7, 4))
        for label, history in self.histories.items():
            steps = range(len(history))
            ax.plot(steps, [l for _, _, l in history], label=label)
        ax.set_xlabel("recorded step")
        ax.set_ylabel("training loss")
        ax.set_yscale("log")
        if self.histories:
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "training_curves.png", dpi=120)
        plt.close(fig)
        return [out / n for n in
                ("report.json", "report.txt", "errors.png", "training_curves.png")]


def _score_net(dataset, net, test_idx):
    pixels, shapes = _entry_inputs(dataset, net.config.variant)
    errs = []
    for j in test_idx:
        px, sh = _batch(net, pixels, shapes, np.array([j]), False)
        out_u, out_v = net.forward(px, sh)
        pred = reconstruct(dataset.model,
                           FaceCoeffs(out_u[0].astype(np.float64),
                                      out_v[0].astype(np.float64)))
        errs.append(mean_vertex_error(pred, dataset.entry_vertices(j)))
    return float(np.mean(errs))


def _score_mm_fit(dataset, test_idx):
    errs = []
    for j in test_idx:
        targets = targets_from_polylines(
            dataset.curves, dataset.sketches[j].polyline_map(),
            reference=dataset.template, camera=DEFAULT_CAMERA)
        res = mm_fit(dataset.model, targets, DEFAULT_CAMERA)
        pred = reconstruct(dataset.model, res.coeffs)
        errs.append(mean_vertex_error(pred, dataset.entry_vertices(j)))
    return float(np.mean(errs))


def run_ablation(dataset, config=None, progress=None):
    config = config or AblationConfig()
    test_idx = dataset.split_indices("test")
    if config.eval_limit:
        test_idx = test_idx[: config.eval_limit]
    if not test_idx:
        raise ValueError("dataset has no test split to score")

    mean_face = dataset.vertices[dataset.split_indices("train")] \
        .astype(np.float64).mean(axis=0)
    baseline = float(np.mean([
        mean_vertex_error(mean_face, dataset.entry_vertices(j))
        for j in test_idx]))

    rows, histories = [], {}
    for label in config.labels:
        if progress is not None:
            progress(label)
        if label == BASELINE_LABEL:
            rows.append(AblationRow(label, _score_mm_fit(dataset, test_idx)))
            continue
        net_cfg = net_config_for(dataset, label, fc_width=config.fc_width)
        result = train_network(dataset, net_cfg, config.schedule)
        histories[label] = result.history
        rows.append(AblationRow(label, _score_net(dataset, result.net, test_idx)))

    return AblationReport(rows=rows, baseline_error_mm=baseline,
                          n_test=len(test_idx), histories=histories)

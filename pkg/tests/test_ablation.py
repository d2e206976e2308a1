import json

import pytest

from sketchface.ablation import (
    ALL_LABELS, AblationConfig, run_ablation,
)
from sketchface.nn.train import TrainSchedule


def tiny_ablation_config(labels=ALL_LABELS):
    return AblationConfig(
        schedule=TrainSchedule(phase_iters=(2, 2, 2),
                               phase_lrs=(1e-3, 1e-4, 1e-9),
                               batch_size=2, seed=3),
        fc_width=16,
        labels=labels,
        eval_limit=3,
    )


@pytest.fixture(scope="module")
def tiny_report(small_dataset):
    return run_ablation(small_dataset, tiny_ablation_config())


def test_all_six_rows_present(tiny_report):
    assert [r.label for r in tiny_report.rows] == list(ALL_LABELS)
    assert len(tiny_report.rows) == 6
    for r in tiny_report.rows:
        assert r.mean_error_mm > 0


def test_fit_baseline_beats_mean_face(tiny_report):
    by_label = {r.label: r.mean_error_mm for r in tiny_report.rows}
    assert by_label["mm_fit"] < tiny_report.baseline_error_mm


def test_report_hash_deterministic(small_dataset, tiny_report):
    cfg = tiny_ablation_config(labels=("mm_fit", "shape_only"))
    a = run_ablation(small_dataset, cfg)
    b = run_ablation(small_dataset, cfg)
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != tiny_report.content_hash()


def test_ordering_sorted_by_error(tiny_report):
    by_label = {r.label: r.mean_error_mm for r in tiny_report.rows}
    order = tiny_report.ordering()
    assert sorted(order, key=by_label.get) == order
    assert set(order) == set(ALL_LABELS)


def test_render_outputs(tmp_path, tiny_report):
    paths = tiny_report.render(tmp_path / "report")
    for p in paths:
        assert p.exists() and p.stat().st_size > 0

    doc = json.loads((tmp_path / "report" / "report.json").read_text())
    assert doc["content_hash"] == tiny_report.content_hash()
    assert len(doc["rows"]) == 6

    table = (tmp_path / "report" / "report.txt").read_text().splitlines()
    assert table[0] == "label\tmean_error_mm"
    assert len(table) == 8  # header + six rows + mean-face line


def test_unknown_label_rejected():
    with pytest.raises(ValueError, match="unknown"):
        AblationConfig(labels=("mm_fit", "transformer"))


def test_empty_test_split_rejected(small_dataset):
    import copy
    ds = copy.copy(small_dataset)
    ds.entries = [type(e)(e.id, e.kind, e.ident, e.expr, "train")
                  for e in small_dataset.entries]
    with pytest.raises(ValueError, match="test split"):
        run_ablation(ds, tiny_ablation_config())

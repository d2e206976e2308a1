import json

import numpy as np
import pytest
from click.testing import CliRunner

from sketchface.cli import main
from sketchface.mesh import load_obj, project_curves
from sketchface.render import DEFAULT_CAMERA

TINY_TOML = """
[dataset]
n_base_identities = 2
exagg_scales = [1.0, 1.6]
n_expressions = 3
vertex_budget = 729
r_id = 4
r_expr = 2
shape_r_id = 4
shape_r_expr = 2
n_interpolated = 6
seed = 11

[dataset.render]
rot_jitter_deg = 1.0
trans_jitter_px = 1.5
line_removal_prob = 0.1
line_deform_px = 1.0
"""


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def built(tmp_path_factory, runner):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.toml"
    cfg.write_text(TINY_TOML)
    out = root / "ds"
    res = runner.invoke(main, ["build-dataset", "--config", str(cfg),
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    return root, cfg, out


def hash_line(output):
    return next(l for l in output.splitlines() if l.startswith("content_hash"))


def test_build_dataset_deterministic(built, runner, tmp_path):
    root, cfg, out = built
    first = (out / "manifest.json").read_text()
    res = runner.invoke(main, ["build-dataset", "--config", str(cfg),
                               "--out", str(tmp_path / "ds2")])
    assert res.exit_code == 0
    second = (tmp_path / "ds2" / "manifest.json").read_text()
    assert json.loads(first)["content_hash"] == json.loads(second)["content_hash"]


def test_build_dataset_unknown_option(runner, tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[dataset]\nresolution = 9\n")
    res = runner.invoke(main, ["build-dataset", "--config", str(cfg),
                               "--out", str(tmp_path / "x")])
    assert res.exit_code != 0
    assert "resolution" in res.output


@pytest.fixture(scope="module")
def trained(built, runner):
    root, cfg, out = built
    net = root / "net.bin"
    res = runner.invoke(main, [
        "train", "--dataset", str(out), "--variant", "shape_only",
        "--fc-width", "32", "--phase-iters", "2,2,2",
        "--phase-lrs", "1e-3,1e-4,1e-9", "--batch-size", "2",
        "--out", str(net), "--history", str(root / "history.csv")])
    assert res.exit_code == 0, res.output
    return net


def test_train_writes_artifacts(trained, built):
    root, _, _ = built
    assert trained.stat().st_size > 0
    history = (root / "history.csv").read_text().splitlines()
    assert history[0] == "phase,iteration,loss"
    assert len(history) > 3


def test_evaluate_report_and_gate(built, runner, tmp_path):
    _, _, out = built
    args = ["evaluate", "--dataset", str(out),
            "--variants", "mm_fit,shape_only", "--fc-width", "16",
            "--phase-iters", "2,2,2", "--phase-lrs", "1e-3,1e-4,1e-9",
            "--batch-size", "2", "--eval-limit", "2",
            "--out", str(tmp_path / "report")]
    res = runner.invoke(main, args + ["--gate-ratio", "0"])
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "report" / "report.json").read_text())
    assert len(doc["rows"]) == 2
    assert (tmp_path / "report" / "errors.png").exists()

    # an absurdly strict gate trips exit code 2
    res = runner.invoke(main, args + ["--gate-ratio", "1e-9"])
    assert res.exit_code == 2
    assert "quality gate failed" in res.output


def test_infer_writes_obj(built, trained, runner, tmp_path, small_dataset):
    _, _, out = built
    mesh, curves = small_dataset.template, small_dataset.curves
    sketch = {name: pts.tolist() for name, _c, pts, _f
              in project_curves(mesh, curves, DEFAULT_CAMERA)}
    sketch_path = tmp_path / "sketch.json"
    sketch_path.write_text(json.dumps(sketch))

    obj_path = tmp_path / "face.obj"
    res = runner.invoke(main, ["infer", "--dataset", str(out),
                               "--net", str(trained),
                               "--sketch", str(sketch_path),
                               "--out", str(obj_path)])
    assert res.exit_code == 0, res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert load_obj(obj_path).n == manifest["n_vertices"]


def test_replay_prints_hash(built, trained, runner, tmp_path):
    _, _, out = built
    from sketchface.cli import _make_assets
    from sketchface.session import apply_stroke, new_session

    state = new_session(_make_assets(str(out), str(trained)),
                        "followup_sketching")
    apply_stroke(state, np.array([[40.0, 40.0], [90.0, 44.0]]))
    log = tmp_path / "events.jsonl"
    log.write_text("\n".join(state.event_log_lines()) + "\n")

    res = runner.invoke(main, ["replay", "--dataset", str(out),
                               "--net", str(trained), "--log", str(log)])
    assert res.exit_code == 0, res.output
    assert f"state_hash {state.state_hash()}" in res.output


def test_help_lists_subcommands(runner):
    res = runner.invoke(main, ["--help"])
    for cmd in ("build-dataset", "train", "evaluate", "infer", "replay", "serve"):
        assert cmd in res.output

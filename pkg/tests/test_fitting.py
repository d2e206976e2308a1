import numpy as np
import pytest

from sketchface.bilinear import reconstruct
from sketchface.fitting import (
    FitTargets, mean_vertex_error, mm_fit, targets_from_polylines,
)
from sketchface.mesh import project_curves
from sketchface.render import DEFAULT_CAMERA


def exact_targets(ds, j):
    mesh = ds.template.with_vertices(ds.entry_vertices(j))
    idx = np.array(ds.curves.handle_indices())
    pix = DEFAULT_CAMERA.project(mesh.vertices[idx])
    return FitTargets(idx, pix)


def test_fit_recovers_clean_projection(small_dataset):
    ds = small_dataset
    for j in [0, 5, 11]:
        res = mm_fit(ds.model, exact_targets(ds, j), DEFAULT_CAMERA)
        assert res.rms_px < 0.5, f"entry {j}: rms {res.rms_px}"


def test_objective_monotone(small_dataset):
    ds = small_dataset
    res = mm_fit(ds.model, exact_targets(ds, 3), DEFAULT_CAMERA)
    diffs = np.diff(res.objectives)
    assert (diffs <= 1e-9 * np.abs(res.objectives[:-1]) + 1e-12).all()
    assert res.converged


def test_fitted_mesh_close_to_truth(small_dataset):
    ds = small_dataset
    res = mm_fit(ds.model, exact_targets(ds, 7), DEFAULT_CAMERA)
    pred = reconstruct(ds.model, res.coeffs)
    err = mean_vertex_error(pred, ds.entry_vertices(7))
    assert err < 5.0  # depth is unconstrained by a frontal sketch


def test_underdetermined_without_regularizer(small_dataset):
    ds = small_dataset
    t = exact_targets(ds, 0)
    few = FitTargets(t.indices[:2], t.pixels[:2])
    with pytest.raises(ValueError, match="determine"):
        mm_fit(ds.model, few, DEFAULT_CAMERA, lam=0.0)


def test_targets_validation():
    with pytest.raises(ValueError, match="duplicate"):
        FitTargets([1, 1], np.zeros((2, 2)))
    with pytest.raises(ValueError, match="pixel"):
        FitTargets([1, 2], np.zeros((3, 2)))


def test_targets_from_polylines(small_dataset):
    ds = small_dataset
    mesh = ds.template.with_vertices(ds.entry_vertices(2))
    polylines = {name: pts for name, _c, pts, _f
                 in project_curves(mesh, ds.curves, DEFAULT_CAMERA)}
    t = targets_from_polylines(ds.curves, polylines)
    # shared eye/mouth corner vertices appear once
    assert len(t.indices) == len(ds.curves.handle_indices())
    # dropping a curve just shrinks the evidence
    partial = {k: v for k, v in polylines.items() if k != "nose"}
    t2 = targets_from_polylines(ds.curves, partial)
    assert len(t2.indices) < len(t.indices)


def test_fit_from_resampled_curves_stays_close(small_dataset):
    ds = small_dataset
    mesh = ds.template.with_vertices(ds.entry_vertices(2))
    polylines = {name: pts for name, _c, pts, _f
                 in project_curves(mesh, ds.curves, DEFAULT_CAMERA)}
    # uniform spacing drifts; reference-fraction correspondence is tighter
    t_uniform = targets_from_polylines(ds.curves, polylines)
    t_ref = targets_from_polylines(ds.curves, polylines,
                                   reference=ds.template, camera=DEFAULT_CAMERA)
    res_u = mm_fit(ds.model, t_uniform, DEFAULT_CAMERA)
    res_r = mm_fit(ds.model, t_ref, DEFAULT_CAMERA)
    assert res_u.rms_px < 10.0
    assert res_r.rms_px < 2.0
    assert res_r.rms_px < res_u.rms_px


def test_mean_vertex_error_translation():
    rng = np.random.default_rng(0)
    gt = rng.uniform(-50, 50, size=(40, 3))
    gt[:, 1] = np.linspace(-100, 100, 40)  # vertical extent exactly 200
    assert mean_vertex_error(gt, gt) == 0.0
    assert np.isclose(mean_vertex_error(gt + [3.0, 0, 0], gt), 3.0)
    # halving the ground truth size doubles the normalized error
    assert np.isclose(mean_vertex_error(0.5 * gt + [1.5, 0, 0], 0.5 * gt), 3.0)


def test_mean_vertex_error_validation():
    with pytest.raises(ValueError, match="mismatch"):
        mean_vertex_error(np.zeros((3, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError, match="extent"):
        mean_vertex_error(np.zeros((3, 3)), np.zeros((3, 3)))

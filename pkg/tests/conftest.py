import numpy as np
import pytest

from sketchface.dataset import DatasetConfig, build_dataset
from sketchface.render import RenderOptions


def small_config(**overrides):
    base = dict(
        n_base_identities=4,
        exagg_scales=(1.0, 1.6),
        n_expressions=4,
        vertex_budget=729,
        r_id=6,
        r_expr=3,
        shape_r_id=6,
        shape_r_expr=3,
        n_interpolated=10,
        seed=11,
        render=RenderOptions(rot_jitter_deg=1.0, trans_jitter_px=1.5,
                             line_removal_prob=0.1, line_deform_px=1.0),
    )
    base.update(overrides)
    return DatasetConfig(**base)


@pytest.fixture(scope="session")
def small_dataset():
    return build_dataset(small_config())


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("gate")
    if marker is None:
        return
    verdict = "PASS" if report.passed else "FAIL"
    reporter = item.config.pluginmanager.get_plugin("terminalreporter")
    line = f"[GATE] {marker.args[0]}: {verdict}"
    if reporter is not None:
        reporter.write_line(line)
    else:
        print(line)

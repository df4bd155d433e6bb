import json
import sys

import pytest

from arrowsim.config import config_from_document


def make_doc(n=20, width=20.0, height=None, region=None, **overrides):
    """A valid config document; ``overrides`` replace top-level keys."""
    height = width if height is None else height
    region = region or {"x_min": 0.0, "y_min": 0.0, "x_max": width / 2, "y_max": height / 2}
    doc = {
        "n_particles": n,
        "box": {"width": width, "height": height},
        "initial_region": region,
        "particle_radius": 0.25,
        "repulsion_strength": 10.0,
        "cutoff": 0.5,
        "mean_speed": 1.0,
        "dt": 0.02,
        "steps": 200,
        "fixed_point_scale": 2**32,
        "seed": 1,
        "sample_every": 10,
    }
    doc.update(overrides)
    return doc


def make_config(n=20, width=20.0, height=None, region=None, **overrides):
    return config_from_document(make_doc(n, width, height, region, **overrides))


@pytest.fixture
def small_config():
    return make_config()


@pytest.fixture
def config_file(tmp_path):
    def write(doc=None, name="c.json"):
        path = tmp_path / name
        path.write_text(json.dumps(make_doc() if doc is None else doc), encoding="utf-8")
        return path
    return write


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.report_lines():
        terminalreporter.write_line(line)

import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from arrowsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from arrowsim.experiments import ExperimentSeries
from arrowsim.io import HEADER, emit_series, format_number, series_text

from conftest import make_doc


def test_empty_series_is_header_only(tmp_path):
    path = tmp_path / "s.csv"
    emit_series(ExperimentSeries("x", ()), path)
    assert path.read_bytes() == (HEADER + "\n").encode()
    assert HEADER == "step,entropy_macro,entropy_volume,return_fraction,divergence,energy"


def test_one_row_in_declared_order():
    s = ExperimentSeries("x", ("entropy_macro", "energy"))
    s.add(3, entropy_macro=0.1, entropy_volume=2.0, return_fraction=1.0, energy=15.000000036770098)
    buf = io.StringIO()
    emit_series(s, buf)
    assert buf.getvalue() == HEADER + "\n3,0.1,2.0,1.0,,15.000000036770098\n"


def test_emit_twice_identical(tmp_path):
    s = ExperimentSeries("x", ("energy",))
    for k in range(5):
        s.add(k, energy=1 / (k + 3))
    emit_series(s, tmp_path / "a.csv")
    emit_series(s, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert b"\r" not in (tmp_path / "a.csv").read_bytes()


@settings(max_examples=200)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_numbers_round_trip(x):
    assert float(format_number(x)) == x


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        format_number(float("nan"))


def test_series_text_rows_follow_steps():
    s = ExperimentSeries("x", ("energy",))
    s.add(0, energy=1.0)
    s.add(10, energy=2.0)
    lines = series_text(s).splitlines()
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "10"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_expand_writes_outputs(tmp_path, config_file, capsys):
    out = tmp_path / "d"
    code, _ = run(["expand", "--config", config_file(), "--out", out], capsys)
    assert code == EXIT_OK
    assert (out / "series.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["protocol"] == "expand"
    assert summary["series"] == {"series": "series.csv"}
    assert len(summary["config_digest"]) == 64
    last = (out / "series.csv").read_text().splitlines()[-1].split(",")
    assert float(last[1]) == summary["headline"]["final_entropy_macro"]


def test_unknown_subcommand(tmp_path, capsys):
    code, cap = run(["bogus"], capsys)
    assert code == EXIT_USAGE
    assert "usage:" in cap.err
    assert cap.err.strip().splitlines()[-1].startswith("arrowsim: error[usage]:")


def test_unknown_flag(tmp_path, config_file, capsys):
    code, cap = run(["expand", "--config", config_file(), "--out", tmp_path, "--frobnicate", "1"], capsys)
    assert code == EXIT_USAGE
    assert "--frobnicate" in cap.err.strip().splitlines()[-1]


def test_config_error_names_key(tmp_path, config_file, capsys):
    path = config_file(make_doc(n=0))
    code, cap = run(["expand", "--config", path, "--out", tmp_path / "d"], capsys)
    assert code == EXIT_CONFIG
    lines = cap.err.strip().splitlines()
    assert len(lines) == 1 and "n_particles" in lines[0]


def test_missing_config_file(tmp_path, capsys):
    code, cap = run(["expand", "--config", tmp_path / "none.json", "--out", tmp_path / "d"], capsys)
    assert code == EXIT_CONFIG


def test_runtime_error(tmp_path, config_file, capsys):
    code, cap = run(["recurrence", "--config", config_file(), "--out", tmp_path / "d"], capsys)
    assert code == EXIT_RUNTIME
    assert cap.err.strip().startswith("arrowsim: error[runtime]:")


def test_negative_flag_is_usage_error(tmp_path, config_file, capsys):
    code, _ = run(["loschmidt", "--config", config_file(), "--out", tmp_path, "--reversal-step", "-1"], capsys)
    assert code == EXIT_USAGE


def test_loschmidt_twice_byte_identical(tmp_path, config_file, capsys):
    path = config_file()
    for name in ("a", "b"):
        code, _ = run(["loschmidt", "--epsilon", "0", "--reversal-step", "100", "--seed", "4",
                       "--config", path, "--out", tmp_path / name], capsys)
        assert code == EXIT_OK
    for f in ("series.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["seed"] == 4
    assert summary["metadata"]["exact_return"] is True


def test_seed_override_changes_output(tmp_path, config_file, capsys):
    path = config_file()
    run(["expand", "--config", path, "--out", tmp_path / "a", "--seed", "1"], capsys)
    run(["expand", "--config", path, "--out", tmp_path / "b", "--seed", "2"], capsys)
    assert (tmp_path / "a" / "series.csv").read_bytes() != (tmp_path / "b" / "series.csv").read_bytes()


def test_sync_and_fit_commands(tmp_path, config_file, capsys):
    a = config_file(make_doc(n=10), "a.json")
    b = config_file(make_doc(n=30), "b.json")
    code, _ = run(["sync", "--config", a, "--config-b", b, "--lambda", "1e-4", "--prep-steps", "100",
                   "--window", "5", "--persistence", "5", "--out", tmp_path / "s"], capsys)
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert set(summary["series"]) == {"series_a", "series_b"}
    assert "sync_step" in summary["headline"]
    code, _ = run(["fit", "--config", a, "--kick-step", "50", "--out", tmp_path / "f"], capsys)
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "f" / "summary.json").read_text())
    assert summary["headline"]["growth_model"] in ("linear", "exponential")


def test_recurrence_command(tmp_path, config_file, capsys):
    doc = make_doc(n=1, repulsion_strength=0.0, steps=3000, sample_every=100)
    code, _ = run(["recurrence", "--config", config_file(doc), "--out", tmp_path / "r"], capsys)
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert "recurrence_step" in summary["headline"]


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0

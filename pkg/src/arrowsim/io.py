"""Byte-stable emission of sample series (CSV) and run summaries (JSON)."""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

from .experiments import CHANNELS, ExperimentSeries

HEADER = "step," + ",".join(CHANNELS)


def format_number(value) -> str:
    """Shortest round-trip decimal text; ``None`` renders as an empty field."""
    if value is None:
        return ""
    if isinstance(value, bool):
        raise TypeError("booleans are not series values")
    if isinstance(value, int):
        return str(value)
    x = float(value)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} in series")
    return repr(x)


def series_text(series: ExperimentSeries) -> str:
    lines = [HEADER]
    for k, step in enumerate(series.steps):
        fields = [str(int(step))] + [format_number(series.channels[c][k]) for c in CHANNELS]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def emit_series(series: ExperimentSeries, destination) -> None:
    """Write ``series`` as CSV to a path or a text stream."""
    text = series_text(series)
    if hasattr(destination, "write"):
        destination.write(text)
        return
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _plain(value):
    """JSON-ready copy: numpy scalars become Python numbers, tuples become lists."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def summary_text(summary: dict) -> str:
    return json.dumps(_plain(summary), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_summary(summary: dict, destination) -> None:
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(summary_text(summary))


def relative_name(path, root) -> str:
    """``path`` relative to ``root`` with forward slashes, so summaries do not depend on the cwd."""
    return Path(os.path.relpath(path, root)).as_posix()


def headline(series: ExperimentSeries) -> dict:
    """Final-row scalars of every channel the series carries."""
    if not series.steps:
        return {}
    out = {"final_step": series.steps[-1]}
    for c in CHANNELS:
        v = series.channels[c][-1]
        if v is not None:
            out[f"final_{c}"] = v
    return out

"""Run configuration: parsing, validation and canonical digest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .dynamics import MODES, BoxGeometry, ForceField, IntegratorMode, Rect

REQUIRED = (
    "n_particles", "box", "initial_region", "particle_radius", "repulsion_strength",
    "cutoff", "mean_speed", "dt", "steps", "fixed_point_scale", "seed",
)
OPTIONAL = {
    "sample_every": 1,
    "grid": {"cells_x": 16, "cells_y": 16},
    "mode": "fixed_reversible",
}


class ConfigError(ValueError):
    """One or more configuration problems; ``problems`` lists each as (key, message)."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.problems))


@dataclass(frozen=True)
class GridSpec:
    cells_x: int
    cells_y: int


@dataclass(frozen=True)
class SimConfig:
    n_particles: int
    box_width: float
    box_height: float
    initial_region: Rect
    particle_radius: float
    repulsion_strength: float
    cutoff: float
    mean_speed: float
    dt: float
    steps: int
    fixed_point_scale: int
    seed: int
    sample_every: int = 1
    grid: GridSpec = field(default_factory=lambda: GridSpec(16, 16))
    mode: str = "fixed_reversible"

    def box_geometry(self) -> BoxGeometry:
        return BoxGeometry(self.box_width, self.box_height, self.initial_region)

    def force_field(self) -> ForceField:
        return ForceField(self.particle_radius, self.repulsion_strength, self.cutoff)

    def integrator_mode(self) -> IntegratorMode:
        return IntegratorMode(self.mode, self.dt, self.fixed_point_scale)

    def coarse_grid(self):
        from .entropy import CoarseGrid
        return CoarseGrid(self.grid.cells_x, self.grid.cells_y, self.box_geometry(), self.integrator_mode())

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_document(self) -> dict:
        r = self.initial_region
        return {
            "n_particles": self.n_particles,
            "box": {"width": self.box_width, "height": self.box_height},
            "initial_region": {"x_min": r.x_min, "y_min": r.y_min, "x_max": r.x_max, "y_max": r.y_max},
            "particle_radius": self.particle_radius,
            "repulsion_strength": self.repulsion_strength,
            "cutoff": self.cutoff,
            "mean_speed": self.mean_speed,
            "dt": self.dt,
            "steps": self.steps,
            "fixed_point_scale": self.fixed_point_scale,
            "seed": self.seed,
            "sample_every": self.sample_every,
            "grid": asdict(self.grid),
            "mode": self.mode,
        }

    def canonical_text(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and v == v and abs(v) != float("inf")


def _sub(doc, key, names, problems):
    val = doc.get(key)
    if not isinstance(val, dict):
        problems.append((key, f"must be an object with keys {', '.join(names)}"))
        return None
    unknown = sorted(set(val) - set(names))
    for u in unknown:
        problems.append((f"{key}.{u}", "unknown key"))
    missing = [n for n in names if n not in val]
    for m in missing:
        problems.append((f"{key}.{m}", "required key missing"))
    return None if missing else val


def parse_config(text: str) -> SimConfig:
    """Parse and validate a JSON config document, reporting every problem at once."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("<document>", f"malformed JSON: {exc}")]) from None
    if not isinstance(doc, dict):
        raise ConfigError([("<document>", "top level must be a JSON object")])
    return config_from_document(doc)


def config_from_document(doc: dict) -> SimConfig:
    problems = []
    unknown = sorted(set(doc) - set(REQUIRED) - set(OPTIONAL))
    if unknown:
        problems.append(("<document>", "unknown keys: " + ", ".join(unknown)))
    for k in REQUIRED:
        if k not in doc:
            problems.append((k, "required key missing"))
    doc = {**OPTIONAL, **doc}

    def need(key, ok, bound):
        if key in doc and not ok(doc[key]):
            problems.append((key, f"must be {bound}"))

    need("n_particles", lambda v: _is_int(v) and v >= 1, "an integer >= 1")
    need("particle_radius", lambda v: _is_num(v) and v > 0, "a number > 0")
    need("repulsion_strength", lambda v: _is_num(v) and v >= 0, "a number >= 0")
    need("cutoff", _is_num, "a number")
    need("mean_speed", lambda v: _is_num(v) and v >= 0, "a number >= 0")
    need("dt", lambda v: _is_num(v) and v > 0, "a number > 0")
    need("steps", lambda v: _is_int(v) and v >= 0, "an integer >= 0")
    need("fixed_point_scale", lambda v: _is_int(v) and 1 <= v <= 2**40, "an integer in [1, 2^40]")
    need("seed", lambda v: _is_int(v) and v >= 0, "an integer >= 0")
    need("sample_every", lambda v: _is_int(v) and v >= 1, "an integer >= 1")
    need("mode", lambda v: v in MODES, "one of " + ", ".join(MODES))

    box = _sub(doc, "box", ("width", "height"), problems) if "box" in doc else None
    if box is not None:
        for k in ("width", "height"):
            if not (_is_num(box[k]) and box[k] > 0):
                problems.append((f"box.{k}", "must be a number > 0"))
    region = _sub(doc, "initial_region", ("x_min", "y_min", "x_max", "y_max"), problems) \
        if "initial_region" in doc else None
    if region is not None:
        if not all(_is_num(region[k]) for k in region):
            problems.append(("initial_region", "bounds must be numbers"))
            region = None
        elif not (region["x_max"] > region["x_min"] and region["y_max"] > region["y_min"]):
            problems.append(("initial_region", "must have x_max > x_min and y_max > y_min"))
            region = None
    grid = _sub(doc, "grid", ("cells_x", "cells_y"), problems)
    if grid is not None:
        for k in ("cells_x", "cells_y"):
            if not (_is_int(grid[k]) and grid[k] >= 1):
                problems.append((f"grid.{k}", "must be an integer >= 1"))
        if all(_is_int(grid[k]) for k in grid) and grid["cells_x"] * grid["cells_y"] < 2:
            problems.append(("grid", "must have cells_x * cells_y >= 2"))

    if _is_num(doc.get("cutoff")) and _is_num(doc.get("particle_radius")) \
            and doc["cutoff"] < 2 * doc["particle_radius"]:
        problems.append(("cutoff", "must be >= 2 * particle_radius"))
    if box is not None and region is not None and _is_num(box["width"]) and _is_num(box["height"]):
        if region["x_min"] < 0 or region["y_min"] < 0 or region["x_max"] > box["width"] \
                or region["y_max"] > box["height"]:
            problems.append(("initial_region", "must lie inside the box"))

    fixed = doc.get("mode") == "fixed_reversible"
    scale = doc.get("fixed_point_scale")
    if fixed and _is_int(scale) and scale >= 1 and box is not None:
        for k in ("width", "height"):
            if _is_num(box[k]) and box[k] > 0:
                units = box[k] * scale
                if units != int(units):
                    problems.append((f"box.{k}", "must be a whole number of fixed-point units"))
                elif units >= 2**53:
                    problems.append((f"box.{k}", "times fixed_point_scale must stay below 2^53"))
                elif grid is not None:
                    cells = grid["cells_x" if k == "width" else "cells_y"]
                    if _is_int(cells) and cells >= 1 and int(units) % cells:
                        problems.append((f"grid.{'cells_x' if k == 'width' else 'cells_y'}",
                                         f"must divide box.{k} into equal fixed-point cells"))
    if fixed and all(_is_num(doc.get(k)) for k in ("mean_speed", "dt")) and box is not None \
            and _is_num(box["width"]) and _is_num(box["height"]):
        if doc["mean_speed"] * doc["dt"] >= 0.5 * min(box["width"], box["height"]):
            problems.append(("dt", "mean_speed * dt must be below half the smaller box side"))

    if problems:
        raise ConfigError(problems)
    return SimConfig(
        n_particles=doc["n_particles"],
        box_width=float(box["width"]),
        box_height=float(box["height"]),
        initial_region=Rect(*(float(region[k]) for k in ("x_min", "y_min", "x_max", "y_max"))),
        particle_radius=float(doc["particle_radius"]),
        repulsion_strength=float(doc["repulsion_strength"]),
        cutoff=float(doc["cutoff"]),
        mean_speed=float(doc["mean_speed"]),
        dt=float(doc["dt"]),
        steps=doc["steps"],
        fixed_point_scale=doc["fixed_point_scale"],
        seed=doc["seed"],
        sample_every=doc["sample_every"],
        grid=GridSpec(grid["cells_x"], grid["cells_y"]),
        mode=doc["mode"],
    )


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())

"""Experiment protocols: expansion, Loschmidt echo, two vessels, recurrence, twin divergence.

Every protocol is a deterministic function of its configs and seeds and
returns :class:`ExperimentSeries` rows sampled every ``config.sample_every``
steps, always including the first and last step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import SimConfig
from .dynamics import PairTracker, ParticleState, evolve, init_state, reverse_velocities, total_energy, trajectory
from .entropy import coarse_grain, occupied_volume_entropy, region_return_fraction
from .perturbation import (CouplingSpec, PerturbationSpec, apply_kick, coupled_trajectory, coupling_energy,
                           divergence, mean_speed)

CHANNELS = ("entropy_macro", "entropy_volume", "return_fraction", "divergence", "energy")

SMOOTHING_WINDOW = 50
PERSISTENCE = 100
RECURRENCE_RADIUS = 1e-3
RELAXATION_LEVEL = 0.95
MAX_RECURRENCE_PARTICLES = 3
MEDIAN_SPAN = 5


class ProtocolError(ValueError):
    pass


@dataclass
class ExperimentSeries:
    protocol: str
    declared: tuple[str, ...]
    steps: list[int] = field(default_factory=list)
    channels: dict[str, list] = field(default_factory=lambda: {c: [] for c in CHANNELS})
    metadata: dict = field(default_factory=dict)
    states: dict[str, ParticleState] = field(default_factory=dict)
    extras: dict[str, list] = field(default_factory=dict)

    def add(self, step: int, **values):
        if self.steps and step <= self.steps[-1]:
            raise ProtocolError(f"sample steps must increase: {step} after {self.steps[-1]}")
        missing = [c for c in self.declared if values.get(c) is None]
        if missing:
            raise ProtocolError(f"sample at step {step} lacks declared channels {missing}")
        self.steps.append(step)
        for c in CHANNELS:
            self.channels[c].append(values.get(c))

    def __len__(self):
        return len(self.steps)

    def column(self, name: str) -> np.ndarray:
        return np.array(self.channels[name], dtype=float)

    def at(self, step: int) -> dict:
        k = self.steps.index(step)
        return {c: self.channels[c][k] for c in CHANNELS}


@dataclass(frozen=True)
class GrowthFit:
    model: str
    rate: float
    r2_linear: float
    r2_exponential: float

    @property
    def margin(self) -> float:
        return abs(self.r2_linear - self.r2_exponential)


class _Sampler:
    """Computes the row for a state; the grid and reference region are fixed per vessel."""

    def __init__(self, config: SimConfig, series: ExperimentSeries, speed_scale: float | None = None):
        self.grid = config.coarse_grid()
        self.region = config.initial_region
        self.field = config.force_field()
        self.series = series
        self.speed_scale = speed_scale

    def values(self, state: ParticleState, twin: ParticleState | None = None) -> dict:
        macro = coarse_grain(state, self.grid)
        row = dict(
            entropy_macro=macro.entropy_macroscopic,
            entropy_volume=occupied_volume_entropy(macro),
            return_fraction=region_return_fraction(state, self.region),
            energy=total_energy(state, self.field),
        )
        if twin is not None:
            row["divergence"] = divergence(state, twin, self.speed_scale)
        return row

    def __call__(self, state: ParticleState, twin: ParticleState | None = None, step: int | None = None):
        self.series.add(state.time_step_index if step is None else step, **self.values(state, twin))


def _base_metadata(config: SimConfig, protocol: str, seed: int) -> dict:
    return {"protocol": protocol, "config_digest": config.digest, "seed": seed}


def _run_segment(state, config, n_steps, sample, start_step, tracker=None, backward=False):
    """Advance ``n_steps`` and sample on the cadence measured from ``start_step``."""
    every = config.sample_every
    end = state.time_step_index + n_steps
    for s in trajectory(state, config.force_field(), config.integrator_mode(), n_steps, backward, tracker):
        state = s
        if (s.time_step_index - start_step) % every == 0 or s.time_step_index == end:
            sample(s)
    return state


def run_free_expansion(config: SimConfig, seed: int | None = None) -> ExperimentSeries:
    seed = config.seed if seed is None else seed
    series = ExperimentSeries("expand", ("entropy_macro", "entropy_volume", "return_fraction", "energy"),
                              metadata=_base_metadata(config, "expand", seed))
    sample = _Sampler(config, series)
    state = init_state(config, seed)
    series.states["initial"] = state
    sample(state)
    tracker = PairTracker(state.n)
    state = _run_segment(state, config, config.steps, sample, 0, tracker)
    series.states["final"] = state
    series.metadata["collisions_per_particle"] = tracker.per_particle
    return series


def run_loschmidt(config: SimConfig, reversal_step: int, perturbation: PerturbationSpec,
                  seed: int | None = None) -> ExperimentSeries:
    """Evolve, reverse every velocity at ``reversal_step``, evolve as long again.

    A kick scheduled at ``reversal_step`` lands just after the reversal. The
    sample row at ``reversal_step`` is taken before the reversal.
    """
    if not 0 <= perturbation.kick_step <= 2 * reversal_step:
        raise ProtocolError("kick_step must lie in [0, 2 * reversal_step]")
    seed = config.seed if seed is None else seed
    series = ExperimentSeries("loschmidt", ("entropy_macro", "entropy_volume", "return_fraction", "energy"),
                              metadata=_base_metadata(config, "loschmidt", seed))
    series.metadata.update(reversal_step=reversal_step, epsilon=perturbation.epsilon,
                           kick_step=perturbation.kick_step, kick_seed=perturbation.seed)
    sample = _Sampler(config, series)
    state = init_state(config, seed)
    series.states["initial"] = state
    sample(state)
    tracker = PairTracker(state.n)
    k = perturbation.kick_step
    if k < reversal_step:
        state = _run_segment(state, config, k, sample, 0, tracker)
        state = apply_kick(state, perturbation)
        state = _run_segment(state, config, reversal_step - k, sample, 0, tracker)
    else:
        state = _run_segment(state, config, reversal_step, sample, 0, tracker)
    series.metadata["collisions_per_particle_at_reversal"] = tracker.per_particle
    series.states["reversal"] = state
    state = reverse_velocities(state)
    if k >= reversal_step:
        state = _run_segment(state, config, k - reversal_step, sample, 0)
        state = apply_kick(state, perturbation)
        state = _run_segment(state, config, 2 * reversal_step - k, sample, 0)
    else:
        state = _run_segment(state, config, reversal_step, sample, 0)
    series.states["final"] = state
    series.metadata["exact_return"] = state.same_phase_point(reverse_velocities(series.states["initial"]))
    return series


def run_twin_divergence(config: SimConfig, perturbation: PerturbationSpec, n_steps: int | None = None,
                        seed: int | None = None) -> ExperimentSeries:
    """A reference run and a twin kicked at ``perturbation.kick_step``.

    Rows from the kick onward carry the divergence between the two. Collisions
    per particle at the kick are recorded from the reference run.
    """
    seed = config.seed if seed is None else seed
    n_steps = config.steps if n_steps is None else n_steps
    k = perturbation.kick_step
    if not 0 <= k <= n_steps:
        raise ProtocolError("kick_step must lie within the run")
    series = ExperimentSeries("fit", ("entropy_macro", "entropy_volume", "return_fraction", "energy"),
                              metadata=_base_metadata(config, "fit", seed))
    series.metadata.update(epsilon=perturbation.epsilon, kick_step=k, kick_seed=perturbation.seed)
    state = init_state(config, seed)
    series.states["initial"] = state
    speed = mean_speed(state) or 1.0
    sample = _Sampler(config, series, speed)
    tracker = PairTracker(state.n)
    if k == 0:
        tracker.update(*_pair_keys(state, config))
    else:
        sample(state)
        state = _run_segment(state, config, k - 1, sample, 0, tracker)
        state = evolve(state, config.force_field(), config.integrator_mode(), 1, tracker=tracker)
    series.metadata["collisions_per_particle_at_kick"] = tracker.per_particle
    twin = apply_kick(state, perturbation)
    row = sample.values(state, twin)
    if series.steps and series.steps[-1] == k:
        series.channels["divergence"][-1] = row["divergence"]
    else:
        series.add(k, **row)
    field_, mode = config.force_field(), config.integrator_mode()
    every = config.sample_every
    ref_it = trajectory(state, field_, mode, n_steps - k, tracker=tracker)
    twin_it = trajectory(twin, field_, mode, n_steps - k)
    for s, t in zip(ref_it, twin_it):
        if (s.time_step_index - k) % every == 0 or s.time_step_index == n_steps:
            sample(s, t)
        state, twin = s, t
    series.states["final"] = state
    series.states["final_twin"] = twin
    series.metadata["collisions_per_particle"] = tracker.per_particle
    return series


def _pair_keys(state, config):
    from .dynamics import _pairs
    i, j, _, _ = _pairs(state.positions, state.mode, config.cutoff)
    if not config.force_field().interacting:
        return i[:0], j[:0]
    return i, j


# ---------------------------------------------------------------------------
# two vessels

def smoothed_slope(values, window: int) -> tuple[np.ndarray, int]:
    """Centered moving average then first difference.

    Returns the slopes and the offset of ``slope[0]``: slope ``m`` describes
    the change from smoothed sample ``m + offset`` to ``m + offset + 1``.
    """
    y = np.asarray(values, dtype=float)
    w = max(1, min(window, len(y)))
    if len(y) < 2:
        return np.empty(0), 0
    avg = np.convolve(y, np.ones(w) / w, mode="valid")
    return np.diff(avg), w // 2


def _persistent_starts(mask: np.ndarray, length: int) -> np.ndarray:
    """Indices from which ``mask`` stays true for at least ``length`` entries."""
    out = np.zeros(len(mask), dtype=bool)
    run = 0
    for m in range(len(mask) - 1, -1, -1):
        run = run + 1 if mask[m] else 0
        out[m] = run >= length
    return np.nonzero(out)[0]


def find_sync_step(steps, entropy, window: int = SMOOTHING_WINDOW, persistence: int = PERSISTENCE,
                   floor: float | None = None) -> int | None:
    """First sampled step after which the smoothed entropy slope stays positive.

    With a ``floor`` (the entropy of the compact state a reversed vessel
    would return to), an upturn only counts while every raw sample up to the
    end of its smoothing window stays strictly above the floor: a vessel that
    completed its return and then re-expanded on its own has not been
    synchronized.
    """
    steps = np.asarray(steps)
    y = np.asarray(entropy, dtype=float)
    slope, offset = smoothed_slope(y, window)
    w = max(1, min(window, len(y)))
    starts = _persistent_starts(slope > 0, persistence)
    if floor is not None and len(starts):
        # slope m uses raw samples m .. m + w
        above = np.minimum.accumulate(y) > floor
        starts = starts[above[np.minimum(starts + w, len(y) - 1)]]
    return None if len(starts) == 0 else int(steps[starts[0] + offset])


def find_persistent_decrease(steps, entropy, window: int = SMOOTHING_WINDOW,
                             persistence: int = PERSISTENCE) -> int | None:
    """First sampled step after which the smoothed entropy slope stays negative."""
    slope, offset = smoothed_slope(entropy, window)
    starts = _persistent_starts(slope < 0, persistence)
    return None if len(starts) == 0 else int(np.asarray(steps)[starts[0] + offset])


def plateau(values, tail: float = 0.25) -> float:
    y = np.asarray(values, dtype=float)
    return float(np.mean(y[-max(1, int(len(y) * tail)):]))


def relaxation_step(steps, entropy, start_step: int = 0, level: float = RELAXATION_LEVEL,
                    plateau_value: float | None = None) -> int | None:
    """Steps from ``start_step`` until entropy first reaches ``level`` of its plateau."""
    steps = np.asarray(steps)
    y = np.asarray(entropy, dtype=float)
    target = level * (plateau(y) if plateau_value is None else plateau_value)
    hit = np.nonzero((steps >= start_step) & (y >= target))[0]
    return None if len(hit) == 0 else int(steps[hit[0]] - start_step)


@dataclass
class SyncResult:
    series_a: ExperimentSeries
    series_b: ExperimentSeries
    sync_step: int | None

    def __iter__(self):
        return iter((self.series_a, self.series_b, self.sync_step))


def prepare_shrinking(config: SimConfig, preparation_steps: int, seed: int | None = None) -> ParticleState:
    """A state whose isolated future contracts back to the compact start.

    The compact state is evolved ``preparation_steps`` forward, velocities are
    reversed, and the clock is reset to 0.
    """
    compact = init_state(config, seed)
    state = evolve(compact, config.force_field(), config.integrator_mode(), preparation_steps)
    return reverse_velocities(state).replace(time_step_index=0)


def run_two_vessel_sync(config_a: SimConfig, config_b: SimConfig, preparation_steps: int,
                        coupling: CouplingSpec, seed_a: int | None = None, seed_b: int | None = None,
                        window: int = SMOOTHING_WINDOW, persistence: int = PERSISTENCE) -> SyncResult:
    """Vessel A expands from a compact start; vessel B is prepared to shrink.

    Both then evolve jointly for ``max(steps)`` steps under ``coupling``.
    ``sync_step`` is the upturn of B's entropy, counted only while B has not
    yet returned to its compact entropy (which an isolated B reaches exactly
    at ``preparation_steps``).
    """
    if coupling.active_interval[0] != 0:
        raise ProtocolError("coupling must switch on at the joint-run origin")
    if config_a.integrator_mode() != config_b.integrator_mode():
        raise ProtocolError("both vessels must share dt, mode and fixed-point scale")
    seed_a = config_a.seed if seed_a is None else seed_a
    seed_b = config_b.seed if seed_b is None else seed_b
    declared = ("entropy_macro", "entropy_volume", "return_fraction", "energy")
    sa = ExperimentSeries("sync", declared, metadata=_base_metadata(config_a, "sync", seed_a))
    sb = ExperimentSeries("sync", declared, metadata=_base_metadata(config_b, "sync", seed_b))
    samp_a, samp_b = _Sampler(config_a, sa), _Sampler(config_b, sb)
    a = init_state(config_a, seed_a)
    compact_b = init_state(config_b, seed_b)
    b = prepare_shrinking(config_b, preparation_steps, seed_b)
    sa.states["initial"], sb.states["initial"], sb.states["compact"] = a, b, compact_b
    joint: list[float] = []

    def record(x, y):
        samp_a(x)
        samp_b(y)
        joint.append(sa.channels["energy"][-1] + sb.channels["energy"][-1]
                     + (coupling_energy(x, y, coupling.lam) if coupling.lam > 0 else 0.0))

    record(a, b)
    n_steps = max(config_a.steps, config_b.steps)
    every = config_b.sample_every
    for x, y in coupled_trajectory(a, b, config_a.force_field(), config_b.force_field(), coupling,
                                   config_a.integrator_mode(), n_steps):
        if x.time_step_index % every == 0 or x.time_step_index == n_steps:
            record(x, y)
        a, b = x, y
    sa.states["final"], sb.states["final"] = a, b
    sa.extras["joint_energy"] = sb.extras["joint_energy"] = joint

    compact_entropy = coarse_grain(compact_b, config_b.coarse_grid()).entropy_macroscopic
    eb = sb.column("entropy_macro")
    sync = find_sync_step(sb.steps, eb, window, persistence, floor=compact_entropy)
    decrease_a = find_persistent_decrease(sa.steps, sa.column("entropy_macro"), window, persistence)
    k_min = int(np.argmin(eb))
    relax = relaxation_step(sb.steps, eb, start_step=sb.steps[k_min])
    relax_at = None if relax is None else sb.steps[k_min] + relax
    meta = dict(preparation_steps=preparation_steps, coupling_lambda=coupling.lam,
                coupling_interval=list(coupling.active_interval), sync_step=sync,
                compact_entropy_b=compact_entropy, min_entropy_b=float(eb[k_min]),
                min_entropy_step_b=sb.steps[k_min], relaxation_steps_b=relax,
                relaxation_step_b=relax_at,
                persistent_decrease_a=decrease_a, seed_a=seed_a, seed_b=seed_b)
    sa.metadata.update(meta)
    sb.metadata.update(meta)
    return SyncResult(sa, sb, sync)


# ---------------------------------------------------------------------------
# recurrence

def run_recurrence(config: SimConfig, max_steps: int, initial_state: ParticleState | None = None,
                   radius: float = RECURRENCE_RADIUS, seed: int | None = None
                   ) -> tuple[ExperimentSeries, int | None]:
    """Evolve until the phase point comes within ``radius`` of where it started.

    Distance is :func:`divergence` against the initial state, normalized by
    the box diagonal and the initial mean speed. Only returns after the
    phase point has first left the ball count, so slow starts are not
    mistaken for recurrences. The run stops at the first recurrence; an
    exact bitwise return is also reported in the metadata.
    """
    if config.n_particles > MAX_RECURRENCE_PARTICLES:
        raise ProtocolError(f"recurrence runs are limited to N <= {MAX_RECURRENCE_PARTICLES}; "
                            "recurrence times grow too fast with N")
    seed = config.seed if seed is None else seed
    series = ExperimentSeries("recurrence", ("entropy_macro", "entropy_volume", "return_fraction",
                                             "divergence", "energy"),
                              metadata=_base_metadata(config, "recurrence", seed))
    s0 = init_state(config, seed) if initial_state is None else initial_state
    if s0.n > MAX_RECURRENCE_PARTICLES:
        raise ProtocolError(f"recurrence runs are limited to N <= {MAX_RECURRENCE_PARTICLES}")
    speed = mean_speed(s0) or 1.0
    sample = _Sampler(config, series, speed)
    series.states["initial"] = s0
    sample(s0, s0)
    found = exact = None
    departed = False
    state = s0
    every = config.sample_every
    for s in trajectory(s0, config.force_field(), config.integrator_mode(), max_steps):
        state = s
        d = divergence(s, s0, speed)
        departed = departed or d >= radius
        if departed and d < radius:
            found = s.time_step_index
            if s.same_phase_point(s0):
                exact = found
            sample(s, s0)
            break
        if s.time_step_index % every == 0 or s.time_step_index == max_steps:
            sample(s, s0)
    series.states["final"] = state
    series.metadata.update(recurrence_step=found, exact_recurrence_step=exact, recurrence_radius=radius,
                           max_steps=max_steps)
    return series, found


# ---------------------------------------------------------------------------
# growth fits

def _r2(y, fitted) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - fitted) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_growth(t, d) -> GrowthFit:
    """Classify ``d(t)`` as linear or exponential growth.

    The linear model passes through the first point, ``d0 + c (t - t0)``; the
    exponential model is a least-squares line through ``ln d``. Both are
    scored by R^2 against ``ln d``: divergence noise is multiplicative, and on
    the log scale neither model is dominated by its last few samples.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    if len(t) < 3:
        raise ProtocolError("need at least three samples to fit growth")
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise ProtocolError("divergence must be strictly positive inside the fit window")
    u = t - t[0]
    log_d = np.log(d)
    c = float(np.dot(u, d - d[0]) / np.dot(u, u))
    line = d[0] + c * u
    r2_lin = _r2(log_d, np.log(line)) if np.all(line > 0) else -math.inf
    slope, intercept = np.polyfit(u, log_d, 1)
    r2_exp = _r2(log_d, intercept + slope * u)
    if r2_exp > r2_lin:
        return GrowthFit("exponential", float(slope), r2_lin, r2_exp)
    return GrowthFit("linear", c, r2_lin, r2_exp)


def growth_window(series: ExperimentSeries, start: int, threshold: float,
                  median_span: int = MEDIAN_SPAN) -> tuple[int, int]:
    """``(start, end)`` where ``end`` is the first sample whose filtered divergence reaches ``threshold``.

    Past that point the twins decorrelate and divergence saturates; if the
    threshold is never reached the window runs to the last sample.
    """
    steps = np.asarray(series.steps)
    sel = np.nonzero(steps >= start)[0]
    d = running_median([series.channels["divergence"][k] for k in sel], median_span)
    hit = np.nonzero(d >= threshold)[0]
    return start, int(steps[sel[hit[0]]] if len(hit) else steps[sel[-1]])


def running_median(values, span: int = MEDIAN_SPAN) -> np.ndarray:
    """Centered running median; the ends use the samples available."""
    y = np.asarray(values, dtype=float)
    half = span // 2
    return np.array([np.median(y[max(0, k - half):k + half + 1]) for k in range(len(y))])


def fit_divergence_growth(series: ExperimentSeries, window: tuple[int, int],
                          median_span: int = MEDIAN_SPAN) -> GrowthFit:
    """Fit the divergence channel over sampled steps in ``[start, end]``.

    When twin particles meet a wall on different steps their velocities differ
    by twice the speed for one step. A running median over ``median_span``
    samples removes these one-sample spikes before fitting. Rates are per step.
    """
    start, end = window
    steps = np.asarray(series.steps)
    sel = (steps >= start) & (steps <= end)
    vals = [series.channels["divergence"][k] for k in np.nonzero(sel)[0]]
    if any(v is None for v in vals):
        raise ProtocolError("divergence channel missing inside the fit window")
    return fit_growth(steps[sel], running_median(vals, median_span) if median_span > 1 else vals)


def collisions_at(config: SimConfig, n_steps: int, seed: int | None = None) -> float:
    """Collisions per particle after ``n_steps`` from the seeded initial state."""
    state = init_state(config, seed)
    tracker = PairTracker(state.n)
    evolve(state, config.force_field(), config.integrator_mode(), n_steps, tracker=tracker)
    return tracker.per_particle


def first_step_where(series: ExperimentSeries, channel: str, predicate: Callable[[float], bool]) -> int | None:
    for s, v in zip(series.steps, series.channels[channel]):
        if v is not None and predicate(v):
            return s
    return None

"""Observer influence on the gas: velocity kicks, inter-vessel springs, divergence."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import rng
from .dynamics import (ForceField, IntegratorMode, PairTracker, ParticleState, drift,
                       half_kick, round_impulse)


@dataclass(frozen=True)
class PerturbationSpec:
    """A single velocity kick of magnitude ``epsilon`` at step ``kick_step``.

    ``target`` is ``None`` for every particle or a sequence of indices.
    ``epsilon = 0`` is the non-perturbing observer.
    """

    epsilon: float
    kick_step: int = 0
    target: Sequence[int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class CouplingSpec:
    """Index-paired springs of stiffness ``lam`` active for steps in ``[start, end)``."""

    lam: float
    active_interval: tuple[int, int] = (0, 2**62)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("coupling strength must be >= 0")
        if self.active_interval[1] < self.active_interval[0]:
            raise ValueError("active_interval must have start <= end")

    def active(self, lower_step: int) -> bool:
        start, end = self.active_interval
        return self.lam > 0 and start <= lower_step < end


def kick_vectors(spec: PerturbationSpec, n: int) -> np.ndarray:
    """The physical velocity increments ``apply_kick`` adds, one row per particle."""
    idx = np.arange(n) if spec.target is None else np.asarray(spec.target, dtype=np.int64)
    out = np.zeros((n, 2))
    dirs = rng.unit_vectors(rng.stream(spec.seed, rng.KICKS), len(idx))
    out[idx] = spec.epsilon * dirs
    return out


def apply_kick(state: ParticleState, spec: PerturbationSpec) -> ParticleState:
    if spec.epsilon == 0:
        return state
    dv = kick_vectors(spec, state.n)
    if state.mode.fixed:
        inc = round_impulse(dv * (state.mode.dt * state.mode.fixed_point_scale)).astype(np.int64)
    else:
        inc = dv
    return state.replace(velocities=state.velocities + inc)


def _pairing(na: int, nb: int):
    k = np.arange(max(na, nb))
    return k % na, k % nb


def spring_half_kicks(qa: np.ndarray, qb: np.ndarray, lam: float, mode: IntegratorMode):
    """Half-step increments from the springs ``lam * (x_B - x_A)`` on each pairing.

    The impulse of each spring is rounded once and applied with opposite signs
    to its two ends, so the joint kick stays an exact shear.
    """
    ia, ib = _pairing(len(qa), len(qb))
    if mode.fixed:
        d = (qb[ib] - qa[ia]) / mode.fixed_point_scale
        imp = round_impulse(lam * d * (0.5 * mode.dt * mode.dt * mode.fixed_point_scale))
    else:
        imp = lam * (qb[ib] - qa[ia]) * (0.5 * mode.dt)
    ka = np.empty((len(qa), 2))
    kb = np.empty((len(qb), 2))
    for c in range(2):
        ka[:, c] = np.bincount(ia, weights=imp[:, c], minlength=len(qa))
        kb[:, c] = -np.bincount(ib, weights=imp[:, c], minlength=len(qb))
    if mode.fixed:
        return ka.astype(np.int64), kb.astype(np.int64)
    return ka, kb


def coupling_energy(a: ParticleState, b: ParticleState, lam: float) -> float:
    ia, ib = _pairing(a.n, b.n)
    d = b.x[ib] - a.x[ia]
    return float(0.5 * lam * np.sum(d * d))


def coupled_trajectory(a: ParticleState, b: ParticleState, field_a: ForceField, field_b: ForceField,
                       coupling: CouplingSpec, mode: IntegratorMode, n_steps: int,
                       trackers: tuple[PairTracker | None, PairTracker | None] = (None, None),
                       ) -> Iterator[tuple[ParticleState, ParticleState]]:
    """Yield both vessels after each joint step.

    A step from index ``t`` to ``t + 1`` is coupled when ``t`` lies in the
    active interval; both of its half kicks then include the springs.
    """
    if a.mode != mode or b.mode != mode:
        raise ValueError("both vessels must use the integrator mode passed in")
    if a.time_step_index != b.time_step_index:
        raise ValueError("vessels must share the step index")
    qa, pa, qb, pb = a.positions, a.velocities, b.positions, b.velocities
    idx = a.time_step_index
    ha = half_kick(qa, field_a, mode, trackers[0])
    hb = half_kick(qb, field_b, mode, trackers[1])
    for _ in range(n_steps):
        on = coupling.active(idx)
        if on:
            sa, sb = spring_half_kicks(qa, qb, coupling.lam, mode)
            pa, pb = pa + ha + sa, pb + hb + sb
        else:
            pa, pb = pa + ha, pb + hb
        qa, pa = drift(qa, pa, a.box, mode)
        qb, pb = drift(qb, pb, b.box, mode)
        ha = half_kick(qa, field_a, mode, trackers[0])
        hb = half_kick(qb, field_b, mode, trackers[1])
        if on:
            sa, sb = spring_half_kicks(qa, qb, coupling.lam, mode)
            pa, pb = pa + ha + sa, pb + hb + sb
        else:
            pa, pb = pa + ha, pb + hb
        idx += 1
        yield (ParticleState(qa, pa.copy(), idx, a.box, mode),
               ParticleState(qb, pb.copy(), idx, b.box, mode))


def coupled_step(a: ParticleState, b: ParticleState, field_a: ForceField, field_b: ForceField,
                 coupling: CouplingSpec, mode: IntegratorMode) -> tuple[ParticleState, ParticleState]:
    return next(coupled_trajectory(a, b, field_a, field_b, coupling, mode, 1))


def divergence(a: ParticleState, b: ParticleState, speed_scale: float) -> float:
    """RMS over particles of the normalized phase-space distance.

    Position differences are divided by the box diagonal, velocity
    differences by ``speed_scale`` (the initial mean speed).
    """
    if a.n != b.n:
        raise ValueError(f"cannot compare states with {a.n} and {b.n} particles")
    if a.n == 0:
        return 0.0
    dx = (a.x - b.x) / a.box.diagonal
    dv = (a.v - b.v) / speed_scale
    return float(np.sqrt(np.sum(dx * dx + dv * dv) / a.n))


def mean_speed(state: ParticleState) -> float:
    v = state.v
    return float(np.mean(np.sqrt(np.sum(v * v, axis=1))))

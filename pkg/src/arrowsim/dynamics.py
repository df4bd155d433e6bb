"""Reversible 2D soft-disk dynamics.

Two integrator modes share one algorithm, velocity Verlet (half kick, drift,
half kick) with specular walls:

``fixed_reversible``
    Positions are ``int64`` multiples of ``1 / scale``. Velocities are stored
    as the displacement per step in the same units, so the drift is an exact
    integer addition. Every pair impulse is rounded half-to-even to an integer
    *before* it is added with opposite signs to the two partners, which makes
    the kick an exact shear and conserves momentum exactly. The walls sit half
    a unit outside the representable range (at ``-1/2`` and ``M - 1/2``), so
    no representable position lies on a wall and the mirror ``y -> -1 - y`` is
    a bijection of the integers. Each substep is then an exact bijection and
    the palindromic composition satisfies ``R step R = step^-1`` bit for bit,
    where ``R`` negates velocities.

``float_reference``
    Plain float64 velocity Verlet with walls at ``0`` and ``width``. Used as an
    oracle and for finite-difference Jacobians; round-off makes it
    irreversible.

Units are dimensionless with unit mass and ``k_B = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator

import numpy as np
from scipy.spatial import cKDTree

from . import rng

if TYPE_CHECKING:
    from .config import SimConfig

FIXED = "fixed_reversible"
FLOAT = "float_reference"
MODES = (FIXED, FLOAT)

# Above this size pair candidates come from a k-d tree instead of all pairs.
BRUTE_FORCE_MAX = 64
# Largest magnitude allowed for any fixed-point coordinate or impulse; beyond
# it int64 <-> float64 conversions stop being exact.
FIXED_LIMIT = 2**53
HEX_PACKING_DENSITY = np.pi / np.sqrt(12.0)
RSA_JAMMING_DENSITY = 0.547


class FixedPointOverflow(ArithmeticError):
    """A fixed-point quantity left the range where the update stays exact."""


class PackingError(ValueError):
    """Raised when the requested disks cannot be placed in the initial region."""


@dataclass(frozen=True)
class Rect:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def within(self, other: "Rect") -> bool:
        return (self.x_min >= other.x_min and self.y_min >= other.y_min
                and self.x_max <= other.x_max and self.y_max <= other.y_max)


@dataclass(frozen=True)
class BoxGeometry:
    width: float
    height: float
    initial_region: Rect

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"box sides must be positive, got {self.width} x {self.height}")
        if not self.initial_region.within(self.bounds):
            raise ValueError(f"initial region {self.initial_region} is not inside the box")

    @property
    def bounds(self) -> Rect:
        return Rect(0.0, 0.0, self.width, self.height)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class ForceField:
    """Soft repulsion ``U(r) = k (1 - r/cutoff)^2`` for ``r < cutoff``.

    The force is finite at contact and vanishes continuously at the cutoff.
    ``k = 0`` gives a collisionless ideal gas.
    """

    particle_radius: float
    repulsion_strength: float
    cutoff: float

    def __post_init__(self):
        if self.particle_radius <= 0:
            raise ValueError("particle_radius must be > 0")
        if self.repulsion_strength < 0:
            raise ValueError("repulsion_strength must be >= 0")
        if self.cutoff < 2 * self.particle_radius:
            raise ValueError("cutoff must be >= 2 * particle_radius")

    @property
    def interacting(self) -> bool:
        return self.repulsion_strength > 0


@dataclass(frozen=True)
class IntegratorMode:
    mode: str
    dt: float
    fixed_point_scale: int = 2**32

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.mode == FIXED and self.fixed_point_scale < 1:
            raise ValueError("fixed_point_scale must be >= 1")

    @property
    def fixed(self) -> bool:
        return self.mode == FIXED

    def grid_units(self, length: float) -> int:
        """Convert a box length to fixed-point units; it must be an exact multiple."""
        units = length * self.fixed_point_scale
        if units != int(units):
            raise ValueError(f"length {length} is not a whole number of fixed-point units")
        return int(units)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ParticleState:
    """Phase point of ``N`` particles.

    In fixed mode ``positions`` and ``velocities`` hold the raw ``int64``
    representation described in the module docstring; use :attr:`x` and
    :attr:`v` for physical values.
    """

    positions: np.ndarray
    velocities: np.ndarray
    time_step_index: int
    box: BoxGeometry
    mode: IntegratorMode

    def __post_init__(self):
        if self.positions.shape != self.velocities.shape or self.positions.shape[1:] != (2,):
            raise ValueError("positions and velocities must both have shape (N, 2)")
        _frozen(self.positions)
        _frozen(self.velocities)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def x(self) -> np.ndarray:
        if self.mode.fixed:
            return self.positions / self.mode.fixed_point_scale
        return np.array(self.positions)

    @property
    def v(self) -> np.ndarray:
        if self.mode.fixed:
            return self.velocities / (self.mode.fixed_point_scale * self.mode.dt)
        return np.array(self.velocities)

    def __eq__(self, other):
        if not isinstance(other, ParticleState):
            return NotImplemented
        return (self.time_step_index == other.time_step_index
                and self.positions.dtype == other.positions.dtype
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.velocities, other.velocities))

    __hash__ = None

    def same_phase_point(self, other: "ParticleState") -> bool:
        """Bitwise equality of positions and velocities, ignoring the step index."""
        return (self.positions.dtype == other.positions.dtype
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.velocities, other.velocities))

    def replace(self, positions=None, velocities=None, time_step_index=None) -> "ParticleState":
        return ParticleState(
            positions=np.array(self.positions if positions is None else positions),
            velocities=np.array(self.velocities if velocities is None else velocities),
            time_step_index=self.time_step_index if time_step_index is None else time_step_index,
            box=self.box,
            mode=self.mode,
        )


def make_state(x, v, box: BoxGeometry, mode: IntegratorMode, time_step_index: int = 0) -> ParticleState:
    """Build a state from physical positions and velocities.

    In fixed mode positions are floored onto the fixed-point lattice and
    velocities rounded half-to-even to whole displacement units per step.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    if mode.fixed:
        s = mode.fixed_point_scale
        upper = np.array([mode.grid_units(box.width), mode.grid_units(box.height)])
        q = np.floor(x * s)
        if np.any(q < 0) or np.any(q > upper - 1):
            raise ValueError("position outside the box")
        p = np.rint(v * (mode.dt * s))
        if np.any(np.abs(p) >= upper):
            raise FixedPointOverflow("velocity * dt exceeds the box size; fixed-point drift would fold twice")
        return ParticleState(q.astype(np.int64), p.astype(np.int64), time_step_index, box, mode)
    if np.any(x < 0) or np.any(x > [box.width, box.height]):
        raise ValueError("position outside the box")
    return ParticleState(x.copy(), v.copy(), time_step_index, box, mode)


def init_state(config: "SimConfig", seed: int | None = None) -> ParticleState:
    """Place ``config.n_particles`` non-overlapping disks in the initial region.

    Positions are rejection-sampled uniformly; velocities have isotropic
    directions and magnitude ``config.mean_speed``. Both streams are seeded
    from ``seed`` (default ``config.seed``).
    """
    seed = config.seed if seed is None else seed
    box, field, mode = config.box_geometry(), config.force_field(), config.integrator_mode()
    x = place_disks(config.n_particles, field.particle_radius, box.initial_region,
                    rng.stream(seed, rng.PLACEMENT), mode)
    v = config.mean_speed * rng.unit_vectors(rng.stream(seed, rng.VELOCITIES), config.n_particles)
    return make_state(x, v, box, mode)


def packing_bound(radius: float, region: Rect) -> int:
    """Upper bound on disks of ``radius`` whose centres fit in ``region``.

    The disks lie inside the region grown by ``radius`` on every side, and no
    planar packing is denser than the hexagonal one.
    """
    grown = (region.width + 2 * radius) * (region.height + 2 * radius)
    return int(np.floor(HEX_PACKING_DENSITY * grown / (np.pi * radius**2)))


def place_disks(n: int, radius: float, region: Rect, gen: np.random.Generator,
                mode: IntegratorMode, max_attempts: int | None = None) -> np.ndarray:
    bound = packing_bound(radius, region)
    fraction = n * np.pi * radius**2 / region.area
    if n > bound:
        raise PackingError(
            f"{n} disks of radius {radius} cannot fit a {region.width} x {region.height} region: "
            f"hexagonal packing limit {HEX_PACKING_DENSITY:.4f} allows at most {bound}")
    if max_attempts is None:
        max_attempts = 1000 * n + 10000
    s = mode.fixed_point_scale if mode.fixed else None
    min_d2 = (2 * radius) ** 2
    placed = np.empty((n, 2))
    count = 0
    attempts = 0
    lo = np.array([region.x_min, region.y_min])
    span = np.array([region.width, region.height])
    while count < n:
        batch = lo + span * gen.random((256, 2))
        if s is not None:
            batch = np.floor(batch * s) / s
        for cand in batch:
            attempts += 1
            if attempts > max_attempts:
                raise PackingError(
                    f"placed only {count} of {n} disks of radius {radius} after {max_attempts} attempts; "
                    f"area fraction {fraction:.3f} is too close to the random sequential packing "
                    f"limit {RSA_JAMMING_DENSITY}")
            if count:
                d = placed[:count] - cand
                if np.min(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) < min_d2:
                    continue
            placed[count] = cand
            count += 1
            if count == n:
                break
    return placed


# ---------------------------------------------------------------------------
# forces

def _pairs(state_positions: np.ndarray, mode: IntegratorMode, cutoff: float):
    """Pairs closer than ``cutoff``: indices ``i < j`` and separation ``x_i - x_j``."""
    n = len(state_positions)
    if n < 2:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, np.empty((0, 2)), np.empty(0)
    if n <= BRUTE_FORCE_MAX:
        i, j = np.triu_indices(n, 1)
    else:
        xf = state_positions / mode.fixed_point_scale if mode.fixed else state_positions
        ij = cKDTree(xf).query_pairs(cutoff * (1 + 1e-9) + 1e-12, output_type="ndarray")
        if len(ij) == 0:
            return _pairs(state_positions[:0], mode, cutoff)
        order = np.lexsort((ij[:, 1], ij[:, 0]))
        i, j = ij[order, 0].astype(np.int64), ij[order, 1].astype(np.int64)
    if mode.fixed:
        d = (state_positions[i] - state_positions[j]) / mode.fixed_point_scale
    else:
        d = state_positions[i] - state_positions[j]
    r2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]
    keep = r2 < cutoff * cutoff
    return i[keep], j[keep], d[keep], r2[keep]


def _pair_forces(d: np.ndarray, r2: np.ndarray, field: ForceField) -> np.ndarray:
    """Force on ``i`` from ``j`` for each pair, given ``d = x_i - x_j``."""
    r = np.sqrt(r2)
    c = field.cutoff
    mag = 2.0 * field.repulsion_strength / c * (1.0 - r / c)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r[:, None] > 0, d / r[:, None], 0.0)
    return mag[:, None] * unit


def _scatter(n: int, i: np.ndarray, j: np.ndarray, imp: np.ndarray) -> np.ndarray:
    out = np.empty((n, 2))
    for k in range(2):
        out[:, k] = np.bincount(i, weights=imp[:, k], minlength=n) - np.bincount(j, weights=imp[:, k], minlength=n)
    return out


def round_impulse(impulse: np.ndarray) -> np.ndarray:
    """Round float impulses half-to-even onto the integer lattice."""
    out = np.rint(impulse)
    if out.size and np.max(np.abs(out)) >= FIXED_LIMIT:
        raise FixedPointOverflow("impulse exceeds the exact fixed-point range")
    return out


class PairTracker:
    """Counts collisions: a pair entering the force cutoff from outside."""

    def __init__(self, n: int):
        self.n = n
        self.collisions = 0
        self._keys = np.empty(0, dtype=np.int64)

    def update(self, i: np.ndarray, j: np.ndarray) -> int:
        keys = i * self.n + j
        new = np.setdiff1d(keys, self._keys, assume_unique=True).size
        self._keys = keys
        self.collisions += new
        return new

    @property
    def per_particle(self) -> float:
        return 2.0 * self.collisions / self.n if self.n else 0.0


def half_kick(positions: np.ndarray, field: ForceField, mode: IntegratorMode,
              tracker: PairTracker | None = None) -> np.ndarray:
    """Velocity increment of half a step from intra-vessel forces.

    Integer displacement units in fixed mode, physical velocity otherwise.
    """
    n = len(positions)
    if not field.interacting or n < 2:
        return np.zeros((n, 2), dtype=np.int64 if mode.fixed else float)
    i, j, d, r2 = _pairs(positions, mode, field.cutoff)
    if tracker is not None:
        tracker.update(i, j)
    f = _pair_forces(d, r2, field)
    if mode.fixed:
        imp = round_impulse(f * (0.5 * mode.dt * mode.dt * mode.fixed_point_scale))
        return _scatter(n, i, j, imp).astype(np.int64)
    return _scatter(n, i, j, f * (0.5 * mode.dt))


def drift(positions: np.ndarray, velocities: np.ndarray, box: BoxGeometry, mode: IntegratorMode):
    """Free flight for one step with specular reflection at the walls."""
    if mode.fixed:
        upper = np.array([mode.grid_units(box.width), mode.grid_units(box.height)], dtype=np.int64)
        if np.any(np.abs(velocities) >= upper):
            raise FixedPointOverflow("displacement per step reached the box size")
        y = positions + velocities
        low = y < 0
        high = y > upper - 1
        y = np.where(low, -1 - y, y)
        y = np.where(high, 2 * upper - 1 - y, y)
        flip = low | high
        return y, np.where(flip, -velocities, velocities)
    size = np.array([box.width, box.height])
    disp = velocities * mode.dt
    if np.any(np.abs(disp) >= size):
        raise FloatingPointError("displacement per step reached the box size")
    y = positions + disp
    low = y < 0
    high = y > size
    y = np.where(low, -y, y)
    y = np.where(high, 2 * size - y, y)
    flip = low | high
    return y, np.where(flip, -velocities, velocities)


def trajectory(state: ParticleState, field: ForceField, mode: IntegratorMode, n_steps: int,
               backward: bool = False, tracker: PairTracker | None = None) -> Iterator[ParticleState]:
    """Yield the state after each of ``n_steps`` steps.

    ``backward=True`` runs the exact inverse map: velocities are negated,
    stepped forward and negated back, which by the time-reversal symmetry of
    the map equals undoing the last half kick, the drift and the first half
    kick with identically recomputed impulses.
    """
    if state.mode != mode:
        raise ValueError("state was built for a different integrator mode")
    sign = -1 if backward else 1
    q = state.positions
    p = sign * state.velocities
    idx = state.time_step_index
    box = state.box
    h = half_kick(q, field, mode, tracker)
    for _ in range(n_steps):
        p = p + h
        q, p = drift(q, p, box, mode)
        h = half_kick(q, field, mode, tracker)
        p = p + h
        idx += sign
        yield ParticleState(q, sign * p, idx, box, mode)


def _last(it):
    out = None
    for out in it:
        pass
    return out


def evolve(state: ParticleState, field: ForceField, mode: IntegratorMode, n_steps: int,
           backward: bool = False, tracker: PairTracker | None = None) -> ParticleState:
    if n_steps == 0:
        return state
    return _last(trajectory(state, field, mode, n_steps, backward, tracker))


def step(state: ParticleState, field: ForceField, mode: IntegratorMode) -> ParticleState:
    return evolve(state, field, mode, 1)


def step_back(state: ParticleState, field: ForceField, mode: IntegratorMode) -> ParticleState:
    return evolve(state, field, mode, 1, backward=True)


def reverse_velocities(state: ParticleState) -> ParticleState:
    return state.replace(velocities=-state.velocities)


def potential_energy(state: ParticleState, field: ForceField) -> float:
    if not field.interacting:
        return 0.0
    _, _, _, r2 = _pairs(state.positions, state.mode, field.cutoff)
    return float(np.sum(field.repulsion_strength * (1.0 - np.sqrt(r2) / field.cutoff) ** 2))


def kinetic_energy(state: ParticleState) -> float:
    v = state.v
    return float(0.5 * np.sum(v * v))


def total_energy(state: ParticleState, field: ForceField) -> float:
    """Kinetic plus pair potential energy, in floating point, for reporting."""
    return kinetic_energy(state) + potential_energy(state, field)

"""Coarse-grained entropies and the one-step phase-volume check.

Entropies are in units of ``k`` with additive constants fixed to zero, so only
differences carry meaning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (BoxGeometry, ForceField, IntegratorMode, ParticleState, Rect,
                       drift, half_kick, make_state)


class EmptySystemError(ValueError):
    pass


@dataclass(frozen=True)
class CoarseGrid:
    """Equal cells tiling the box.

    In fixed mode every cell is a whole number of fixed-point units wide, so
    cell assignment is exact integer division.
    """

    cells_x: int
    cells_y: int
    box: BoxGeometry
    mode: IntegratorMode

    def __post_init__(self):
        if self.cells_x < 1 or self.cells_y < 1 or self.cells_x * self.cells_y < 2:
            raise ValueError("a coarse grid needs at least two cells")
        if self.mode.fixed:
            for units, cells, name in ((self.mode.grid_units(self.box.width), self.cells_x, "width"),
                                       (self.mode.grid_units(self.box.height), self.cells_y, "height")):
                if units % cells:
                    raise ValueError(f"{cells} cells do not tile the box {name} in fixed-point units")

    @property
    def n_cells(self) -> int:
        return self.cells_x * self.cells_y

    @property
    def cell_area(self) -> float:
        return self.box.area / self.n_cells

    def cell_indices(self, state: ParticleState) -> np.ndarray:
        """Flat cell index per particle; cells are half-open with the far box edges closed."""
        if state.mode.fixed:
            q = state.positions
            wx = self.mode.grid_units(self.box.width) // self.cells_x
            wy = self.mode.grid_units(self.box.height) // self.cells_y
            cx = q[:, 0] // wx
            cy = q[:, 1] // wy
        else:
            x = state.positions
            cx = np.floor(x[:, 0] * (self.cells_x / self.box.width)).astype(np.int64)
            cy = np.floor(x[:, 1] * (self.cells_y / self.box.height)).astype(np.int64)
        cx = np.clip(cx, 0, self.cells_x - 1)
        cy = np.clip(cy, 0, self.cells_y - 1)
        return cy * self.cells_x + cx


@dataclass(frozen=True, eq=False)
class MacroState:
    occupancy: np.ndarray
    n: int
    grid: CoarseGrid
    entropy_macroscopic: float


def coarse_grain(state: ParticleState, grid: CoarseGrid) -> MacroState:
    occ = np.bincount(grid.cell_indices(state), minlength=grid.n_cells)
    occ.flags.writeable = False
    return MacroState(occ, int(occ.sum()), grid, occupancy_entropy(occ))


def occupancy_entropy(occupancy) -> float:
    """``-N sum p ln p`` over the nonzero cells of an occupancy vector."""
    occ = np.asarray(occupancy)
    n = int(occ.sum())
    if n == 0:
        raise EmptySystemError("entropy of an empty system is undefined")
    nz = occ[occ > 0].astype(float)
    # N ln N - sum n ln n; fsum keeps the result independent of cell order
    return max(0.0, n * math.log(n) - math.fsum(nz * np.log(nz)))


def macroscopic_entropy(macro: MacroState) -> float:
    return occupancy_entropy(macro.occupancy)


def ln_multinomial(occupancy) -> float:
    """Exact ``ln(N! / prod n_c!)`` via integer factorials."""
    occ = [int(c) for c in occupancy]
    w = math.factorial(sum(occ))
    for c in occ:
        w //= math.factorial(c)
    return math.log(w)


def occupied_volume_entropy(macro: MacroState) -> float:
    """Ideal-gas entropy ``N ln V_occ`` of the volume covered by occupied cells."""
    occupied = int(np.count_nonzero(macro.occupancy))
    if occupied == 0:
        raise EmptySystemError("no occupied cells")
    return macro.n * math.log(occupied * macro.grid.cell_area)


def region_return_fraction(state: ParticleState, region: Rect) -> float:
    """Fraction of particles inside ``region`` (half-open, far box edges closed)."""
    if state.n == 0:
        return 0.0
    x = state.x
    box = state.box
    hi_x = x[:, 0] <= region.x_max if region.x_max >= box.width else x[:, 0] < region.x_max
    hi_y = x[:, 1] <= region.y_max if region.y_max >= box.height else x[:, 1] < region.y_max
    inside = (x[:, 0] >= region.x_min) & (x[:, 1] >= region.y_min) & hi_x & hi_y
    return float(np.count_nonzero(inside)) / state.n


# ---------------------------------------------------------------------------
# Liouville proxy

@dataclass(frozen=True)
class PhaseVolumeCheck:
    defect: float
    determinant: float
    reliable: bool
    note: str = ""


def _flow(phase: np.ndarray, n: int, field: ForceField, mode: IntegratorMode, box: BoxGeometry) -> np.ndarray:
    x = phase[:2 * n].reshape(n, 2)
    v = phase[2 * n:].reshape(n, 2)
    v = v + half_kick(x, field, mode)
    x, v = drift(x, v, box, mode)
    v = v + half_kick(x, field, mode)
    return np.concatenate([x.ravel(), v.ravel()])


def _jacobian(phase, n, field, mode, box, h):
    dim = len(phase)
    jac = np.empty((dim, dim))
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        jac[:, k] = (_flow(phase + e, n, field, mode, box) - _flow(phase - e, n, field, mode, box)) / (2 * h)
    return jac


def phase_volume_check(field: ForceField, mode: IntegratorMode, state: ParticleState,
                       h: float = 1e-5) -> PhaseVolumeCheck:
    """``|det J - 1|`` for the one-step map at ``state``.

    ``J`` is estimated by central differences at steps ``h`` and ``h/2`` and
    Richardson-extrapolated. The result is flagged unreliable when the two
    estimates disagree by more than the reported defect tolerance allows or
    when a perturbed point crosses a wall or the force cutoff (the map is only
    piecewise smooth).
    """
    if mode.fixed:
        raise ValueError("the finite-difference Jacobian needs float_reference mode")
    if state.n > 4:
        raise ValueError("phase_volume_check is limited to N <= 4")
    n = state.n
    phase = np.concatenate([state.x.ravel(), state.v.ravel()])
    j1 = _jacobian(phase, n, field, mode, state.box, h)
    j2 = _jacobian(phase, n, field, mode, state.box, h / 2)
    jac = (4 * j2 - j1) / 3
    det = float(np.linalg.det(jac))
    d1, d2 = float(np.linalg.det(j1)), float(np.linalg.det(j2))
    spread = abs(d1 - d2)
    reliable = spread < 1e-6
    note = "" if reliable else f"finite-difference determinants disagree by {spread:.3g}"
    return PhaseVolumeCheck(abs(det - 1.0), det, reliable, note)


def float_copy(state: ParticleState, mode: IntegratorMode) -> ParticleState:
    """Physical-value copy of ``state`` for a float-mode integrator."""
    return make_state(state.x, state.v, state.box, mode, state.time_step_index)

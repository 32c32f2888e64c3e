"""Dempster-Shafer occupancy masses, grid geometry, and evidential fusion.

The frame of discernment is {free, occupied}.  Each cell carries belief
masses on {O} and {F}; the mass on {F, O} (ignorance) is implicit as
``1 - m_occ - m_free``, so normalization holds by construction and cannot
drift across repeated combinations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels import combine_masses
from .errors import SpecMismatch, TotalConflict

# Guard on the combination-rule denominator; exact-zero comparison is
# numerically fragile.
CONFLICT_LIMIT = 1.0 - 1e-12
_MASS_TOL = 1e-9

DEFAULT_ALPHA = 0.9


@dataclass(frozen=True)
class MassCell:
    """Belief masses on {occupied} and {free} for a single cell."""

    m_occ: float = 0.0
    m_free: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.m_occ) and np.isfinite(self.m_free)):
            raise ValueError("masses must be finite")
        if self.m_occ < 0.0 or self.m_free < 0.0:
            raise ValueError(f"masses must be nonnegative, got ({self.m_occ}, {self.m_free})")
        if self.m_occ + self.m_free > 1.0 + _MASS_TOL:
            raise ValueError(
                f"m_occ + m_free = {self.m_occ + self.m_free} exceeds 1"
            )

    @property
    def m_unk(self) -> float:
        """Ignorance mass on {free, occupied}."""
        return 1.0 - self.m_occ - self.m_free


VACUOUS = MassCell()


def combine(a: MassCell, b: MassCell) -> MassCell:
    """Dempster's combination rule for two cells.

    Commutative and associative; the vacuous cell is the identity.
    Raises TotalConflict when the conflict mass reaches 1 and the
    normalization denominator vanishes.
    """
    conflict = a.m_occ * b.m_free + a.m_free * b.m_occ
    if conflict >= CONFLICT_LIMIT:
        raise TotalConflict(f"conflict mass {conflict} leaves no compatible evidence")
    denom = 1.0 - conflict
    occ = (a.m_occ * b.m_occ + a.m_occ * b.m_unk + a.m_unk * b.m_occ) / denom
    free = (a.m_free * b.m_free + a.m_free * b.m_unk + a.m_unk * b.m_free) / denom
    return MassCell(occ, free)


def discount(c: MassCell, alpha: float) -> MassCell:
    """Age the evidence in a cell by a factor ``alpha`` in [0, 1].

    Occupied and free masses shrink toward zero; the released mass
    returns to ignorance.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return MassCell(min(alpha * c.m_occ, 1.0), min(alpha * c.m_free, 1.0))


def pignistic(c: MassCell) -> float:
    """Occupancy probability: ignorance mass splits equally between O and F."""
    return c.m_occ + 0.5 * c.m_unk


@dataclass(frozen=True)
class GridSpec:
    """Geometry of an ego-centered square grid.

    The ego vehicle sits at the exact grid center, on the corner between
    the two middle cells; by convention its cell index is
    ``cells_per_side // 2`` on both axes.  +x (east) increases the column
    index; +y (north) decreases the row index (row 0 is the north edge).
    """

    cells_per_side: int = 128
    side_length: float = 42.7

    def __post_init__(self):
        if self.cells_per_side < 2 or self.cells_per_side % 2 != 0:
            raise ValueError(f"cells_per_side must be even and >= 2, got {self.cells_per_side}")
        if not (np.isfinite(self.side_length) and self.side_length > 0):
            raise ValueError(f"side_length must be positive, got {self.side_length}")

    @property
    def cell_size(self) -> float:
        return self.side_length / self.cells_per_side

    @property
    def shape(self) -> tuple[int, int]:
        return (self.cells_per_side, self.cells_per_side)

    def grid_coords(self, x, y, ego_x: float = 0.0, ego_y: float = 0.0):
        """Continuous (column-axis u, row-axis v) coordinates of world points."""
        half = self.cells_per_side / 2.0
        s = self.cell_size
        u = half + (np.asarray(x, dtype=np.float64) - ego_x) / s
        v = half - (np.asarray(y, dtype=np.float64) - ego_y) / s
        return u, v

    def world_to_cell(self, x, y, ego_x: float = 0.0, ego_y: float = 0.0):
        """Cell (row, col) containing each world point (may be out of range)."""
        u, v = self.grid_coords(x, y, ego_x, ego_y)
        return np.floor(v).astype(np.int64), np.floor(u).astype(np.int64)

    def cell_center(self, row, col, ego_x: float = 0.0, ego_y: float = 0.0):
        """World (x, y) of cell centers."""
        half = self.cells_per_side / 2.0
        s = self.cell_size
        x = ego_x + (np.asarray(col, dtype=np.float64) + 0.5 - half) * s
        y = ego_y + (half - np.asarray(row, dtype=np.float64) - 0.5) * s
        return x, y

    def in_bounds(self, row, col):
        n = self.cells_per_side
        return (np.asarray(row) >= 0) & (np.asarray(row) < n) & (np.asarray(col) >= 0) & (np.asarray(col) < n)


@dataclass
class EvidentialGrid:
    """Ego-centered grid of Dempster-Shafer masses.

    ``m_occ`` and ``m_free`` are (H, W) float64 arrays; the ignorance mass
    is implicit per cell.
    """

    spec: GridSpec
    m_occ: np.ndarray
    m_free: np.ndarray
    frame_index: int = 0
    timestamp: float = 0.0

    @property
    def m_unk(self) -> np.ndarray:
        return 1.0 - self.m_occ - self.m_free

    def pignistic(self) -> np.ndarray:
        return self.m_occ + 0.5 * self.m_unk

    def cell(self, row: int, col: int) -> MassCell:
        return MassCell(float(self.m_occ[row, col]), float(self.m_free[row, col]))

    def copy(self) -> "EvidentialGrid":
        return replace(self, m_occ=self.m_occ.copy(), m_free=self.m_free.copy())

    def validate(self) -> None:
        if self.m_occ.shape != self.spec.shape or self.m_free.shape != self.spec.shape:
            raise SpecMismatch(
                f"mass arrays {self.m_occ.shape} do not match spec {self.spec.shape}"
            )
        if not (np.isfinite(self.m_occ).all() and np.isfinite(self.m_free).all()):
            raise ValueError("grid masses must be finite")
        if (self.m_occ < 0).any() or (self.m_free < 0).any():
            raise ValueError("grid masses must be nonnegative")
        if (self.m_occ + self.m_free > 1.0 + _MASS_TOL).any():
            raise ValueError("grid masses exceed 1 in at least one cell")


def vacuous_grid(spec: GridSpec, frame_index: int = 0, timestamp: float = 0.0) -> EvidentialGrid:
    """Grid of total ignorance: all mass on {free, occupied}."""
    n = spec.cells_per_side
    return EvidentialGrid(
        spec=spec,
        m_occ=np.zeros((n, n), dtype=np.float64),
        m_free=np.zeros((n, n), dtype=np.float64),
        frame_index=frame_index,
        timestamp=timestamp,
    )


def combine_grids(a: EvidentialGrid, b: EvidentialGrid) -> EvidentialGrid:
    """Cellwise Dempster combination of two grids with matching geometry."""
    if a.spec != b.spec:
        raise SpecMismatch(f"grid specs differ: {a.spec} vs {b.spec}")
    occ, free, conflict = combine_masses(a.m_occ, a.m_free, b.m_occ, b.m_free)
    bad = conflict >= CONFLICT_LIMIT
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise TotalConflict(f"total conflict at cell ({row}, {col})")
    return EvidentialGrid(
        spec=a.spec,
        m_occ=occ,
        m_free=free,
        frame_index=b.frame_index,
        timestamp=b.timestamp,
    )


def fuse_grid(prior: EvidentialGrid, measurement: EvidentialGrid, alpha: float = DEFAULT_ALPHA) -> EvidentialGrid:
    """Fuse a measurement grid into an aged prior.

    The prior is discounted by ``alpha`` (information aging) and combined
    cellwise with the measurement.  Inputs are unmodified; the output frame
    index is the prior's incremented by one.
    """
    if prior.spec != measurement.spec:
        raise SpecMismatch(f"grid specs differ: {prior.spec} vs {measurement.spec}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    aged_occ = np.minimum(alpha * prior.m_occ, 1.0)
    aged_free = np.minimum(alpha * prior.m_free, 1.0)
    occ, free, conflict = combine_masses(aged_occ, aged_free, measurement.m_occ, measurement.m_free)
    bad = conflict >= CONFLICT_LIMIT
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise TotalConflict(f"total conflict at cell ({row}, {col})")
    return EvidentialGrid(
        spec=prior.spec,
        m_occ=occ,
        m_free=free,
        frame_index=prior.frame_index + 1,
        timestamp=measurement.timestamp,
    )

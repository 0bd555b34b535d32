"""Hexagonal unit regions, per-cell quantification and the spectrum-space totals."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import PowerBounds, consumption_at

SQRT3 = math.sqrt(3.0)
IDENTITY_RTOL = 1e-9
MAP_COLUMNS = ["col", "row", "center_x_m", "center_y_m", "quantum", "band",
               "occupancy_w", "opportunity_w", "liability_w"]


class ConfigError(ValueError):
    pass


class InvariantError(RuntimeError):
    """A conservation identity failed; always a bug."""


@dataclass(frozen=True)
class HexGrid:
    """Flat-top hexagons; cell (0, 0) is centred on ``origin``.

    Columns are ``1.5 * side`` apart, rows ``sqrt(3) * side`` apart and odd
    columns are shifted up by half a row.  Cells are indexed column-major:
    ``index = col * rows + row``.
    """

    side: float
    cols: int
    rows: int
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.side > 0:
            raise ConfigError(f"hex side must be positive, got {self.side}")
        if self.cols < 1 or self.rows < 1:
            raise ConfigError(f"grid needs at least one column and row, got {self.cols}x{self.rows}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows

    @property
    def cell_area(self) -> float:
        return 1.5 * SQRT3 * self.side ** 2

    @property
    def col_pitch(self) -> float:
        return 1.5 * self.side

    @property
    def row_pitch(self) -> float:
        return SQRT3 * self.side

    def center(self, col: int, row: int) -> tuple:
        if not (0 <= col < self.cols and 0 <= row < self.rows):
            raise IndexError(f"cell ({col}, {row}) outside {self.cols}x{self.rows} grid")
        x = self.origin[0] + col * self.col_pitch
        y = self.origin[1] + (row + 0.5 * (col % 2)) * self.row_pitch
        return (x, y)

    @cached_property
    def col_row(self) -> np.ndarray:
        c, r = np.meshgrid(np.arange(self.cols), np.arange(self.rows), indexing="ij")
        return np.stack([c.ravel(), r.ravel()], axis=1)

    @cached_property
    def centers(self) -> np.ndarray:
        c = self.col_row[:, 0]
        r = self.col_row[:, 1]
        x = self.origin[0] + c * self.col_pitch
        y = self.origin[1] + (r + 0.5 * (c % 2)) * self.row_pitch
        return np.stack([x, y], axis=1)

    def bounds(self) -> tuple:
        """(xmin, ymin, xmax, ymax) of the rectangle whose area equals the cells' total area."""
        xmin = self.origin[0] - 0.75 * self.side
        ymin = self.origin[1] - 0.5 * self.row_pitch
        return (xmin, ymin, xmin + self.cols * self.col_pitch, ymin + self.rows * self.row_pitch)

    def contains(self, point) -> bool:
        xmin, ymin, xmax, ymax = self.bounds()
        return xmin <= point[0] <= xmax and ymin <= point[1] <= ymax

    def locate(self, points) -> np.ndarray:
        """Index of the cell whose centre is nearest to each point (lowest index on ties)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        c0 = np.floor((pts[:, 0] - self.origin[0]) / self.col_pitch).astype(int)
        best = np.full(len(pts), -1)
        best_d = np.full(len(pts), np.inf)
        # the nearest centre is always within one column / two rows of the estimate
        for dc in (-1, 0, 1, 2):
            c = np.clip(c0 + dc, 0, self.cols - 1)
            r0 = np.floor((pts[:, 1] - self.origin[1]) / self.row_pitch - 0.5 * (c % 2)).astype(int)
            for dr in (-1, 0, 1, 2):
                r = np.clip(r0 + dr, 0, self.rows - 1)
                idx = c * self.rows + r
                cx = self.origin[0] + c * self.col_pitch
                cy = self.origin[1] + (r + 0.5 * (c % 2)) * self.row_pitch
                d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
                better = (d < best_d) | ((d == best_d) & (idx < best))
                best = np.where(better, idx, best)
                best_d = np.where(better, d, best_d)
        return best


def build_grid(side: float, cols: int, rows: int, origin=(0.0, 0.0)) -> HexGrid:
    return HexGrid(float(side), int(cols), int(rows), origin)


def grid_for_region(xmin: float, ymin: float, width: float, height: float, side: float) -> HexGrid:
    """Smallest grid of ``side`` whose bounding rectangle starts at (xmin, ymin) and covers the region."""
    cols = max(1, math.ceil(width / (1.5 * side) - 1e-9))
    rows = max(1, math.ceil(height / (SQRT3 * side) - 1e-9))
    return HexGrid(side, cols, rows, (xmin + 0.75 * side, ymin + 0.5 * SQRT3 * side))


def sample_point(grid: HexGrid, col: int, row: int) -> tuple:
    return grid.center(col, row)


@dataclass(frozen=True)
class SpectrumFrame:
    n_bands: int = 1
    n_quanta: int = 1
    band_width_hz: float = 6e6
    band_centers_hz: Optional[tuple] = None
    quantum_s: float = 10.0

    def __post_init__(self):
        if self.n_bands < 1 or self.n_quanta < 1:
            raise ConfigError("frame needs at least one band and one quantum")


@dataclass(frozen=True)
class CellConsumption:
    col: int
    row: int
    quantum: int
    band: int
    occupancy: float
    opportunity: float
    liability: float


@dataclass(frozen=True)
class SpectrumSpaceTotals:
    total: float
    utilized: float
    forbidden: float
    available: float
    cell_area_m2: float = 1.0

    def fraction(self, name: str) -> float:
        return getattr(self, name) / self.total

    def in_w_m2(self, name: str) -> float:
        return getattr(self, name) * self.cell_area_m2

    def identity_error(self) -> float:
        return abs(self.utilized + self.forbidden + self.available - self.total) / self.total


def total_space(grid: HexGrid, frame: SpectrumFrame, bounds: PowerBounds = PowerBounds()) -> float:
    return bounds.p_max * grid.n_cells * frame.n_bands * frame.n_quanta


@dataclass
class ConsumptionMap:
    """Per-cell Omega / Gamma / Phi with array shape (quanta, bands, cells)."""

    grid: HexGrid
    frame: SpectrumFrame
    occupancy: np.ndarray
    opportunity: np.ndarray
    liability: np.ndarray
    bounds: PowerBounds = field(default_factory=PowerBounds)

    def cell(self, col: int, row: int, quantum: int = 0, band: int = 0) -> CellConsumption:
        i = col * self.grid.rows + row
        return CellConsumption(col, row, quantum, band, float(self.occupancy[quantum, band, i]),
                               float(self.opportunity[quantum, band, i]),
                               float(self.liability[quantum, band, i]))

    def totals(self) -> SpectrumSpaceTotals:
        t = SpectrumSpaceTotals(
            total=total_space(self.grid, self.frame, self.bounds),
            utilized=math.fsum(self.occupancy.ravel()),
            forbidden=math.fsum(self.liability.ravel()),
            available=math.fsum(self.opportunity.ravel()),
            cell_area_m2=self.grid.cell_area,
        )
        if not t.identity_error() < IDENTITY_RTOL:
            raise InvariantError(f"utilized+forbidden+available deviates from total by {t.identity_error():.3e}")
        return t


def quantify_points(points, scenario, quantum: int = 0, band: int = 0, literal: bool = False):
    """(omega, gamma, phi) at arbitrary points for the transceivers active in (quantum, band)."""
    txs, rxs = scenario.active(quantum, band)
    return consumption_at(points, txs, rxs, scenario.prop, scenario.bounds, scenario.ambient_noise, literal)


def quantify_cell(grid: HexGrid, col: int, row: int, quantum: int, band: int, scenario,
                  literal: bool = False) -> CellConsumption:
    w, g, f = quantify_points(np.asarray(grid.center(col, row)), scenario, quantum, band, literal)
    return CellConsumption(col, row, quantum, band, float(w), float(g), float(f))


def aggregate(grid: HexGrid, frame: SpectrumFrame, scenario, literal: bool = False):
    """Quantify every (cell, quantum, band); returns ``(totals, map)``."""
    shape = (frame.n_quanta, frame.n_bands, grid.n_cells)
    omega, gamma, phi = np.empty(shape), np.empty(shape), np.empty(shape)
    cache = {}
    for q in range(frame.n_quanta):
        for b in range(frame.n_bands):
            txs, rxs = scenario.active(q, b)
            key = (tuple(t.id for t in txs), tuple(r.id for r in rxs))
            if key not in cache:
                cache[key] = consumption_at(grid.centers, txs, rxs, scenario.prop, scenario.bounds,
                                            scenario.ambient_noise, literal)
            omega[q, b], gamma[q, b], phi[q, b] = cache[key]
    cmap = ConsumptionMap(grid, frame, omega, gamma, phi, scenario.bounds)
    return cmap.totals(), cmap


@dataclass(frozen=True)
class SweepRow:
    side: float
    cols: int
    rows: int
    totals: SpectrumSpaceTotals


def discretization_sweep(scenario, sides: Sequence[float], region: tuple) -> list:
    """Totals for a fixed rectangular ``region = (xmin, ymin, width, height)`` at each hex side."""
    out = []
    for side in sides:
        grid = grid_for_region(*region, side)
        totals, _ = aggregate(grid, scenario.frame, scenario)
        out.append(SweepRow(float(side), grid.cols, grid.rows, totals))
    return out


def export_map(cmap: ConsumptionMap, path, confidence: Optional[np.ndarray] = None) -> Path:
    """Write one CSV row per (cell, quantum, band) using shortest round-trip floats."""
    path = Path(path)
    header = MAP_COLUMNS + (["confidence"] if confidence is not None else [])
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            centers = cmap.grid.centers
            cr = cmap.grid.col_row
            for i in range(cmap.grid.n_cells):
                for q in range(cmap.frame.n_quanta):
                    for b in range(cmap.frame.n_bands):
                        row = [int(cr[i, 0]), int(cr[i, 1]), repr(float(centers[i, 0])), repr(float(centers[i, 1])),
                               q, b, repr(float(cmap.occupancy[q, b, i])), repr(float(cmap.opportunity[q, b, i])),
                               repr(float(cmap.liability[q, b, i]))]
                        if confidence is not None:
                            row.append(repr(float(confidence[q, b, i])))
                        w.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write map to {path}: {exc}") from exc
    return path


def read_map(path, grid: HexGrid, frame: Optional[SpectrumFrame] = None,
             bounds: PowerBounds = PowerBounds()) -> ConsumptionMap:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if frame is None:
        frame = SpectrumFrame(n_bands=1 + max(int(r["band"]) for r in rows),
                              n_quanta=1 + max(int(r["quantum"]) for r in rows))
    shape = (frame.n_quanta, frame.n_bands, grid.n_cells)
    arrays = {k: np.full(shape, np.nan) for k in ("occupancy_w", "opportunity_w", "liability_w")}
    for r in rows:
        i = int(r["col"]) * grid.rows + int(r["row"])
        for k, a in arrays.items():
            a[int(r["quantum"]), int(r["band"]), i] = float(r[k])
    if any(np.isnan(a).any() for a in arrays.values()):
        raise ValueError(f"{path}: map does not cover every (cell, quantum, band)")
    return ConsumptionMap(grid, frame, arrays["occupancy_w"], arrays["opportunity_w"], arrays["liability_w"], bounds)

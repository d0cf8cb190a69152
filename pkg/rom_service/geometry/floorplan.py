"""
Floorplans: rectangular functional units that receive power, and their
footprint overlap with the grid's heating-layer columns.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import sparse

from rom_service.errors import GeometryError
from rom_service.geometry.grid import Grid, GridSpec

logger = logging.getLogger(__name__)

FLOORPLAN_COLUMNS = ['name', 'x0_mm', 'y0_mm', 'width_mm', 'height_mm']
MM = 1e-3

# Slack for mm -> m rounding at the chip edge
_EDGE_RTOL = 1e-9


class FunctionalUnit(BaseModel):
    """Unit footprint in SI meters"""

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1)
    x0: float = Field(..., ge=0)
    y0: float = Field(..., ge=0)
    w: float = Field(..., gt=0)
    hgt: float = Field(..., gt=0)

    @property
    def area(self) -> float:
        return self.w * self.hgt


class Floorplan(BaseModel):
    """Ordered units on a chip of extent len_x by len_y (m)"""

    model_config = ConfigDict(frozen=True)

    len_x: float = Field(..., gt=0)
    len_y: float = Field(..., gt=0)
    units: Tuple[FunctionalUnit, ...]

    @model_validator(mode='after')
    def check_units(self):
        names = [unit.name for unit in self.units]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValueError(f"Duplicate unit names: {', '.join(duplicates)}")

        for unit in self.units:
            if unit.x0 + unit.w > self.len_x * (1 + _EDGE_RTOL):
                raise ValueError(f"Unit {unit.name} extends past len_x = {self.len_x} m")
            if unit.y0 + unit.hgt > self.len_y * (1 + _EDGE_RTOL):
                raise ValueError(f"Unit {unit.name} extends past len_y = {self.len_y} m")
        return self

    @property
    def unit_names(self) -> Tuple[str, ...]:
        return tuple(unit.name for unit in self.units)


def load_floorplan(path: Union[str, Path], spec: GridSpec) -> Floorplan:
    """
    Parse a floorplan CSV (millimeters) and validate it against the chip extents.

    Header: name,x0_mm,y0_mm,width_mm,height_mm. Lines starting with '#' are
    ignored. Units keep file order.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, comment='#', skipinitialspace=True, dtype={'name': str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise GeometryError(f"Malformed floorplan {path}: {e}") from e

    df.columns = [str(column).strip() for column in df.columns]
    if list(df.columns) != FLOORPLAN_COLUMNS:
        raise GeometryError(
            f"Floorplan {path} header must be {','.join(FLOORPLAN_COLUMNS)}, got {','.join(df.columns)}"
        )
    if df.isna().any().any():
        bad_rows = (df.index[df.isna().any(axis=1)] + 1).tolist()
        raise GeometryError(f"Floorplan {path} has incomplete rows: {bad_rows}")

    try:
        numbers = df[FLOORPLAN_COLUMNS[1:]].apply(pd.to_numeric, errors='raise').to_numpy(np.float64)
    except (ValueError, TypeError) as e:
        raise GeometryError(f"Floorplan {path} has non-numeric dimensions: {e}") from e

    units: List[FunctionalUnit] = []
    try:
        for name, (x0, y0, w, hgt) in zip(df['name'].str.strip(), numbers):
            units.append(FunctionalUnit(name=name, x0=x0 * MM, y0=y0 * MM, w=w * MM, hgt=hgt * MM))
        floorplan = Floorplan(len_x=spec.len_x, len_y=spec.len_y, units=tuple(units))
    except ValueError as e:
        raise GeometryError(f"Invalid floorplan {path}: {e}") from e

    logger.info(f"Loaded floorplan {path.name}: {len(floorplan.units)} units")
    return floorplan


@dataclass(frozen=True)
class OverlapMap:
    """
    Footprint fractions of each unit over heating-layer columns.

    columns[u] holds flat column indices (j * nx + i), fractions[u] the share of
    unit u's footprint inside each column; every fractions[u] sums to 1.
    """

    unit_names: Tuple[str, ...]
    columns: Tuple[np.ndarray, ...] = field(repr=False)
    fractions: Tuple[np.ndarray, ...] = field(repr=False)
    matrix: sparse.csr_matrix = field(repr=False)
    grid_hash: int

    def unit_position(self, name: str) -> int:
        try:
            return self.unit_names.index(name)
        except ValueError:
            raise GeometryError(f"Unit {name} is not part of this overlap map") from None


def _interval_overlap(lo: float, hi: float, edges: np.ndarray) -> np.ndarray:
    return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None)


def unit_cell_overlap(fp: Floorplan, grid: Grid) -> OverlapMap:
    """Intersect every unit rectangle with the grid columns"""
    if not (np.isclose(fp.len_x, grid.spec.len_x, rtol=_EDGE_RTOL)
            and np.isclose(fp.len_y, grid.spec.len_y, rtol=_EDGE_RTOL)):
        raise GeometryError(
            f"Floorplan extents {fp.len_x} x {fp.len_y} m do not match grid "
            f"{grid.spec.len_x} x {grid.spec.len_y} m"
        )

    x_edges = np.arange(grid.nx + 1) * grid.dx
    y_edges = np.arange(grid.ny + 1) * grid.dy

    columns, fractions = [], []
    rows, cols, vals = [], [], []
    for u, unit in enumerate(fp.units):
        ox = _interval_overlap(unit.x0, unit.x0 + unit.w, x_edges)
        oy = _interval_overlap(unit.y0, unit.y0 + unit.hgt, y_edges)
        area = np.outer(oy, ox).ravel()

        hit = np.flatnonzero(area > 0)
        share = area[hit] / area[hit].sum()
        share.setflags(write=False)
        hit.setflags(write=False)
        columns.append(hit)
        fractions.append(share)

        rows.append(hit)
        cols.append(np.full(hit.size, u))
        vals.append(share)

    matrix = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_columns, len(fp.units)),
    ) if fp.units else sparse.csr_matrix((grid.n_columns, 0))

    return OverlapMap(
        unit_names=fp.unit_names,
        columns=tuple(columns),
        fractions=tuple(fractions),
        matrix=matrix,
        grid_hash=grid.grid_hash,
    )

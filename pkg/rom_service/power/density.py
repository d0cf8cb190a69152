"""
Mapping unit power onto heating-layer cells.

Power is spread uniformly over each unit's footprint and uniformly through the
heating-layer thickness.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from rom_service.errors import GeometryError, PowerTraceError
from rom_service.geometry.floorplan import OverlapMap
from rom_service.geometry.grid import Grid
from rom_service.power.traces import PowerTrace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadField:
    """
    Volumetric power density q (W/m^3) and the matching per-cell heat input
    q * V (W). Nonzero only in heating-layer cells.
    """

    q: np.ndarray = field(repr=False)
    heat: np.ndarray = field(repr=False)

    @property
    def total_power(self) -> float:
        return float(self.heat.sum())


def _check_binding(overlap: OverlapMap, grid: Grid):
    if overlap.grid_hash != grid.grid_hash:
        raise GeometryError("Overlap map was built for a different grid")


def unit_load_matrix(overlap: OverlapMap, grid: Grid) -> sparse.csr_matrix:
    """
    Sparse (n_cells x n_units) matrix of watts deposited per cell per watt of unit power.

    A heating cell in layer k of a column holding fraction f of a unit receives
    f * dz_k / t_heat of that unit's power.
    """
    _check_binding(overlap, grid)
    t_heat = grid.spec.t_heat
    blocks = [overlap.matrix * (grid.dz[k] / t_heat) for k in range(grid.nz_heat)]
    substrate = grid.n_cells - grid.n_heat_cells
    blocks.append(sparse.csr_matrix((substrate, len(overlap.unit_names))))
    return sparse.vstack(blocks, format='csr')


def aligned_power(trace: PowerTrace, overlap: OverlapMap) -> np.ndarray:
    """Trace power with columns in overlap-map unit order"""
    return trace.power_for(overlap.unit_names)


def power_density(trace: PowerTrace, overlap: OverlapMap, grid: Grid, step: int) -> LoadField:
    """Load field of one trace step"""
    _check_binding(overlap, grid)
    if not 0 <= step < trace.n_steps:
        raise PowerTraceError(f"Step {step} outside trace of {trace.n_steps} steps")

    unit_power = aligned_power(trace, overlap)[step]
    return load_from_unit_power(unit_power, unit_load_matrix(overlap, grid), grid)


def load_from_unit_power(unit_power: np.ndarray, loads: sparse.csr_matrix, grid: Grid) -> LoadField:
    heat = loads @ unit_power
    return LoadField(q=heat / grid.volumes, heat=heat)

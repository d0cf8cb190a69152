"""
Point and path probes on cell fields.

Probes sample the nearest cell center. A point exactly halfway between two
centers resolves to the lower index.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from rom_service.errors import GeometryError
from rom_service.geometry.grid import Grid
from rom_service.pod.basis import PodBasis

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeResult:
    """
    Sampled values with an optional reference.

    coordinates are times (s) for a point evolution and positions (m) along the
    path for a line profile. Percent errors are relative to the reference rise
    above t_amb.
    """

    kind: Literal['point-evolution', 'line-profile']
    coordinates: np.ndarray
    values: np.ndarray
    location: Dict[str, float] = field(default_factory=dict)
    reference: Optional[np.ndarray] = None
    t_amb: float = 0.0

    def __post_init__(self):
        if self.coordinates.shape != self.values.shape:
            raise GeometryError("Probe coordinates and values differ in length")
        if self.reference is not None and self.reference.shape != self.values.shape:
            raise GeometryError("Probe reference and values differ in length")

    @property
    def abs_error(self) -> Optional[np.ndarray]:
        if self.reference is None:
            return None
        return np.abs(self.values - self.reference)

    @property
    def pct_error(self) -> Optional[np.ndarray]:
        if self.reference is None:
            return None
        rise = np.abs(self.reference - self.t_amb)
        out = np.full(rise.shape, np.nan)
        np.divide(100.0 * self.abs_error, rise, out=out, where=rise > 0)
        return out

    def to_frame(self) -> pd.DataFrame:
        first = 'time_s' if self.kind == 'point-evolution' else 'position_m'
        df = pd.DataFrame({first: self.coordinates, 'value_K': self.values})
        if self.reference is not None:
            df['reference_K'] = self.reference
            df['abs_err_K'] = self.abs_error
            df['pct_err'] = self.pct_error
        return df


def nearest_index(coordinate: float, spacing: float, count: int, extent: float, axis: str) -> int:
    """Cell whose center is nearest; ties go to the lower index"""
    if not 0.0 <= coordinate <= extent:
        raise GeometryError(f"{axis} = {coordinate} m outside [0, {extent}] m")
    return int(np.clip(np.ceil(coordinate / spacing) - 1, 0, count - 1))


def _check_layer(grid: Grid, layer: int):
    if not 0 <= layer < grid.nz:
        raise GeometryError(f"Layer {layer} outside 0..{grid.nz - 1}")


def locate_point(grid: Grid, x: float, y: float, layer: int = 0) -> Tuple[int, Dict[str, float]]:
    """Cell index sampled for (x, y, layer) and the center it resolves to"""
    _check_layer(grid, layer)
    i = nearest_index(x, grid.dx, grid.nx, grid.spec.len_x, 'x')
    j = nearest_index(y, grid.dy, grid.ny, grid.spec.len_y, 'y')
    location = {'x_m': float(grid.x_centers[i]), 'y_m': float(grid.y_centers[j]), 'layer': layer}
    return grid.index(i, j, layer), location


def point_evolution(fields: np.ndarray, grid: Grid, x: float, y: float, layer: int = 0,
                    times: Optional[np.ndarray] = None, reference: Optional[np.ndarray] = None,
                    t_amb: float = 0.0) -> ProbeResult:
    """Values of one cell over time from a (cells x steps) field stack"""
    fields = grid.check_field(fields, 'fields')
    if fields.ndim == 1:
        fields = fields[:, None]
    cell, location = locate_point(grid, x, y, layer)

    values = fields[cell]
    ref = None
    if reference is not None:
        ref = grid.check_field(reference, 'reference').reshape(grid.n_cells, -1)[cell]
    coordinates = np.arange(values.size, dtype=np.float64) if times is None else np.asarray(times, dtype=np.float64)
    return ProbeResult(
        kind='point-evolution',
        coordinates=coordinates,
        values=values,
        location=location,
        reference=ref,
        t_amb=t_amb,
    )


def _path(grid: Grid, values: np.ndarray, axis: str, offset: float, layer: int):
    _check_layer(grid, layer)
    plane = grid.as_volume(values)[layer]
    if axis == 'x':
        j = nearest_index(offset, grid.dy, grid.ny, grid.spec.len_y, 'y')
        return grid.x_centers, plane[j, :], {'y_m': float(grid.y_centers[j])}
    if axis == 'y':
        i = nearest_index(offset, grid.dx, grid.nx, grid.spec.len_x, 'x')
        return grid.y_centers, plane[:, i], {'x_m': float(grid.x_centers[i])}
    raise GeometryError(f"Path axis must be 'x' or 'y', got {axis!r}")


def line_profile(field_values: np.ndarray, grid: Grid, axis: str, offset: float, layer: int = 0,
                 reference: Optional[np.ndarray] = None, t_amb: float = 0.0) -> ProbeResult:
    """Cell-center values along an x or y path at a fixed transverse offset"""
    field_values = grid.check_field(field_values, 'field')
    positions, values, location = _path(grid, field_values, axis, offset, layer)
    ref = None
    if reference is not None:
        _, ref, _ = _path(grid, grid.check_field(reference, 'reference'), axis, offset, layer)
    location['layer'] = layer
    return ProbeResult(
        kind='line-profile',
        coordinates=positions.copy(),
        values=values.copy(),
        location=location,
        reference=None if ref is None else ref.copy(),
        t_amb=t_amb,
    )


def mode_profiles(basis: PodBasis, axis: str, offset: float, layer: int = 0,
                  modes: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Mode values and their spatial derivatives along a path.

    Conductance entries are projections of mode gradients, so gradient
    profiles show where a coarse training mesh degrades the model.
    """
    grid = basis.grid
    modes = range(1, basis.M + 1) if modes is None else modes
    positions, _, _ = _path(grid, basis.phi[:, 0], axis, offset, layer)
    df = pd.DataFrame({'position_m': positions})
    for mode in modes:
        if not 1 <= mode <= basis.M:
            raise GeometryError(f"Mode {mode} outside 1..{basis.M}")
        _, values, _ = _path(grid, basis.phi[:, mode - 1], axis, offset, layer)
        df[f'phi_{mode}'] = values
        df[f'dphi_{mode}'] = np.gradient(values, positions) if values.size > 1 else 0.0
    return df

"""
Galerkin reduced-order model.

The discrete FOM operators are projected onto the POD modes:
    C = Phi^T Mdiag Phi,  G = Phi^T A Phi,  p_n = Phi^T (q_n V)
and the M-dimensional system C da/dt + G a = p is integrated with backward
Euler at the FOM time step. Temperatures are T_amb + Phi a.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
import scipy.linalg as la

from rom_service.errors import GeometryError, RomError
from rom_service.fom.operators import FomOperators
from rom_service.geometry.floorplan import OverlapMap
from rom_service.geometry.grid import Grid, Region
from rom_service.pod.basis import PodBasis
from rom_service.power.density import aligned_power, unit_load_matrix
from rom_service.power.traces import PowerTrace
from rom_service.storage.podt import KIND_FIELDS, PodtReader, PodtWriter, atomic_write

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RomSystem:
    """Projected capacitance C (J/K) and conductance G (W/K)"""

    C: np.ndarray
    G: np.ndarray
    basis: PodBasis = field(repr=False)
    _factors: Dict[float, tuple] = field(default_factory=dict, repr=False, compare=False)

    @property
    def M(self) -> int:
        return self.C.shape[0]

    def factorization(self, dt: float):
        """Cholesky factors of C/dt + G, cached per dt"""
        if dt <= 0:
            raise RomError(f"Time step must be positive, got {dt}")
        if dt not in self._factors:
            try:
                factor = la.cho_factor(self.C / dt + self.G)
            except la.LinAlgError as e:
                logger.error(f"ROM system singular at dt={dt}: {e}")
                raise RomError(f"Reduced system C/dt + G is singular at dt={dt}: {e}") from e
            self._factors[dt] = (factor, self.C / dt)
        return self._factors[dt]


def project_system(ops: FomOperators, basis: PodBasis) -> RomSystem:
    """c_ij = phi_i^T Mdiag phi_j, g_ij = phi_i^T A phi_j"""
    if basis.grid.grid_hash != ops.grid.grid_hash or basis.n_cells != ops.n_cells:
        raise GeometryError(
            f"Basis has {basis.n_cells} cells, operators have {ops.n_cells}"
        )
    phi = basis.phi
    C = phi.T @ (ops.mdiag[:, None] * phi)
    G = phi.T @ (ops.A @ phi)
    return RomSystem(C=0.5 * (C + C.T), G=0.5 * (G + G.T), basis=basis)


class RomLoadProjector:
    """
    Projects unit power onto the modes: p = W P with W = Phi^T L (M x units).

    at(step) and series() share one code path, so on-demand rows equal the
    precomputed series bit for bit.
    """

    def __init__(self, basis: PodBasis, trace: PowerTrace, overlap: OverlapMap, grid: Grid):
        if basis.grid.grid_hash != grid.grid_hash:
            raise GeometryError("Basis and load grid differ")
        loads = unit_load_matrix(overlap, grid)
        self.W = np.ascontiguousarray((loads.T @ basis.phi).T)
        self.power = aligned_power(trace, overlap)
        self.dt = trace.dt_sample

    def at(self, step: int) -> np.ndarray:
        return self.W @ self.power[step]

    def series(self) -> np.ndarray:
        return np.stack([self.at(n) for n in range(self.power.shape[0])])


@dataclass(frozen=True)
class RomLoadSeries:
    """Projected loads p (steps x M) in watts; row n drives step n"""

    p: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return self.p.shape[0]


def project_load(basis: PodBasis, trace: PowerTrace, overlap: OverlapMap, grid: Grid) -> RomLoadSeries:
    """p[n][j] = sum_c phi_j,c q_c(n) V_c for every trace step"""
    projector = RomLoadProjector(basis, trace, overlap, grid)
    return RomLoadSeries(p=projector.series(), dt=trace.dt_sample)


def rom_step(a_n: np.ndarray, sys: RomSystem, p_next: np.ndarray, dt: float) -> np.ndarray:
    """Solve (C/dt + G) a_next = (C/dt) a_n + p_next"""
    factor, c_over_dt = sys.factorization(dt)
    return la.cho_solve(factor, c_over_dt @ a_n + p_next, check_finite=False)


@dataclass(frozen=True)
class RomTrajectory:
    """Modal coefficients a (steps+1 x M) at times (s); ode_seconds excludes I/O"""

    a: np.ndarray
    times: np.ndarray
    ode_seconds: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        columns = {'time_s': self.times}
        for i in range(self.a.shape[1]):
            columns[f'a_{i + 1}'] = self.a[:, i]
        return pd.DataFrame(columns)


def rom_simulate(sys: RomSystem, loads: RomLoadSeries, a0: Optional[np.ndarray],
                 dt: float, steps: int, substeps: int = 1) -> RomTrajectory:
    """
    Integrate the reduced system; a[0] is the initial condition.

    Load row n is held over `substeps` solver steps of size dt, matching the
    FOM. Coefficients are recorded once per load row.
    """
    if steps > loads.n_steps:
        raise RomError(f"Loads cover {loads.n_steps} steps, {steps} requested")
    if substeps < 1:
        raise RomError(f"substeps must be at least 1, got {substeps}")

    a = np.empty((steps + 1, sys.M))
    a[0] = np.zeros(sys.M) if a0 is None else a0
    sys.factorization(dt)

    start = time.perf_counter()
    for n in range(steps):
        a_n = a[n]
        for _ in range(substeps):
            a_n = rom_step(a_n, sys, loads.p[n], dt)
        a[n + 1] = a_n
    ode_seconds = time.perf_counter() - start

    logger.info(f"ROM: {steps} steps with {sys.M} modes in {ode_seconds * 1e3:.3f} ms")
    return RomTrajectory(a=a, times=np.arange(steps + 1) * (dt * substeps), ode_seconds=ode_seconds)


def reconstruct(basis: PodBasis, a_vec: np.ndarray, region: Region = Region(), t_amb: float = 0.0) -> np.ndarray:
    """
    T = T_amb + sum_i a_i phi_i on the region's cells.

    Modes are accumulated in a fixed order per cell, so a restricted region
    reproduces the same cells of a whole-chip reconstruction exactly.
    """
    a_vec = np.asarray(a_vec, dtype=np.float64)
    if a_vec.shape != (basis.M,):
        raise RomError(f"Coefficient vector has shape {a_vec.shape}, basis has {basis.M} modes")
    idx = region.indices(basis.grid)
    out = np.zeros(region.size(basis.grid))
    for i in range(basis.M):
        out += a_vec[i] * basis.phi[idx, i]
    return out + t_amb


def reconstruct_series(basis: PodBasis, a: np.ndarray, region: Region = Region()) -> np.ndarray:
    """Temperature-rise fields (cells x records) for rows of a"""
    idx = region.indices(basis.grid)
    return basis.phi[idx] @ np.asarray(a).T


@dataclass(frozen=True)
class FieldRecords:
    """Reconstructed fields on a region, one column per record"""

    values: np.ndarray
    times: np.ndarray
    region: Region
    grid_hash: int


def save_fields(records: FieldRecords, path: Union[str, Path]):
    """Field container: region descriptor, value count, record count, times, values"""
    descriptor = records.region.descriptor()
    with atomic_write(path) as f:
        writer = PodtWriter(f, KIND_FIELDS, records.grid_hash)
        writer.counts(len(descriptor), *descriptor)
        writer.counts(records.values.shape[0], records.values.shape[1])
        writer.floats(records.times)
        writer.floats(records.values)


def load_fields(path: Union[str, Path]) -> FieldRecords:
    reader = PodtReader(path, KIND_FIELDS)
    (n_desc,) = reader.counts(1)
    descriptor = reader.counts(n_desc)
    region = Region.from_descriptor(descriptor)
    n_values, n_records = reader.counts(2)
    times = reader.floats(n_records)
    values = reader.floats((n_values, n_records))
    reader.finish()
    return FieldRecords(values=values, times=times, region=region, grid_hash=reader.grid_hash)


def field_slice_frame(field_values: np.ndarray, grid: Grid, layer: int = 0) -> pd.DataFrame:
    """Plot-ready x_m, y_m, value rows for one layer of a whole-chip field"""
    field_values = grid.check_field(field_values, 'field')
    plane = field_values[grid.layer_cells(layer)]
    xs, ys = np.meshgrid(grid.x_centers, grid.y_centers)
    return pd.DataFrame({'x_m': xs.ravel(), 'y_m': ys.ravel(), 'value': plane})

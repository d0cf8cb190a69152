"""
Full-order transient solver: backward Euler with Jacobi-preconditioned CG.

Produces training snapshots, serves as the validation reference and provides
the steady-state oracle.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from rom_service.errors import GeometryError, SolverError
from rom_service.fom.operators import FomOperators
from rom_service.geometry.floorplan import OverlapMap
from rom_service.geometry.grid import Grid
from rom_service.power.density import LoadField, aligned_power, unit_load_matrix
from rom_service.power.traces import PowerTrace
from rom_service.storage.podt import KIND_SNAPSHOTS, PodtReader, PodtWriter, atomic_write

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
_RESTARTS = 3


@dataclass(frozen=True)
class ThermalState:
    """Temperature rise above ambient per cell (K) at time t (s)"""

    theta: np.ndarray = field(repr=False)
    t: float = 0.0


@dataclass
class SnapshotSet:
    """
    Temperature-rise fields, one column per sample, ordered by time.

    final and wall_seconds are filled by simulate() and are not persisted.
    """

    S: np.ndarray = field(repr=False)
    times: np.ndarray
    grid: Grid = field(repr=False)
    final: Optional[ThermalState] = field(default=None, repr=False)
    wall_seconds: float = 0.0

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.float64)
        if self.S.ndim != 2 or self.S.shape[1] < 1:
            raise GeometryError("A snapshot set needs at least one column")
        self.grid.check_field(self.S, 'snapshot matrix')
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.shape != (self.S.shape[1],):
            raise GeometryError(f"{self.times.size} sample times for {self.S.shape[1]} snapshots")

    @property
    def n_snapshots(self) -> int:
        return self.S.shape[1]

    @classmethod
    def concat(cls, sets: Sequence['SnapshotSet']) -> 'SnapshotSet':
        """Pool several runs on one grid into a single ensemble"""
        grid = sets[0].grid
        for other in sets[1:]:
            if other.grid.grid_hash != grid.grid_hash:
                raise GeometryError("Cannot pool snapshots from different grids")
        return cls(
            S=np.hstack([s.S for s in sets]),
            times=np.concatenate([s.times for s in sets]),
            grid=grid,
        )


class FomSolver:
    """Backward-Euler stepper with per-dt cached system matrices"""

    def __init__(self, ops: FomOperators, tol: float = DEFAULT_TOL, maxiter: Optional[int] = None):
        self.ops = ops
        self.tol = tol
        self.maxiter = maxiter
        self._systems: Dict[float, Tuple[sparse.csr_matrix, sparse.dia_matrix]] = {}

    def _system(self, dt: float):
        if dt not in self._systems:
            K = (sparse.diags(self.ops.mdiag / dt) + self.ops.A).tocsr()
            precond = sparse.diags(1.0 / K.diagonal())
            self._systems[dt] = (K, precond)
        return self._systems[dt]

    def solve(self, K, rhs: np.ndarray, x0: np.ndarray, precond) -> np.ndarray:
        """CG to relative residual <= tol, restarting from the last iterate if needed"""
        norm_rhs = np.linalg.norm(rhs)
        if norm_rhs == 0.0:
            return np.zeros_like(rhs)

        x = x0
        residual = np.inf
        for _ in range(_RESTARTS):
            x, info = cg(K, rhs, x0=x, rtol=self.tol, atol=0.0, maxiter=self.maxiter, M=precond)
            residual = np.linalg.norm(rhs - K @ x) / norm_rhs
            if residual <= self.tol:
                return x
            logger.debug(f"CG restart: info={info}, residual={residual:.3e}")

        logger.error(f"Linear solve did not converge: residual {residual:.3e} > {self.tol:.1e}")
        raise SolverError(
            f"Linear solver stalled at relative residual {residual:.3e} (target {self.tol:.1e})",
            residual=residual,
        )

    def advance(self, theta: np.ndarray, heat: np.ndarray, dt: float) -> np.ndarray:
        """(Mdiag/dt + A) theta_next = Mdiag/dt * theta + heat"""
        if dt <= 0:
            raise SolverError(f"Time step must be positive, got {dt}")
        K, precond = self._system(dt)
        rhs = self.ops.mdiag / dt * theta + heat
        return self.solve(K, rhs, theta, precond)

    def step(self, state: ThermalState, load: LoadField, dt: float) -> ThermalState:
        return ThermalState(theta=self.advance(state.theta, load.heat, dt), t=state.t + dt)


def step(state: ThermalState, ops: FomOperators, load: LoadField, dt: float,
         tol: float = DEFAULT_TOL) -> ThermalState:
    """One backward-Euler step"""
    return FomSolver(ops, tol=tol).step(state, load, dt)


def simulate(
    theta0: Optional[np.ndarray],
    ops: FomOperators,
    trace: PowerTrace,
    overlap: OverlapMap,
    grid: Grid,
    steps: int,
    sample_every: int = 1,
    substeps: int = 1,
    tol: float = DEFAULT_TOL,
) -> SnapshotSet:
    """
    Run the FOM over the first `steps` trace rows.

    Row n of the trace drives the step from n*dt to (n+1)*dt, held constant over
    `substeps` solver steps. The field after step n is recorded when
    (n + 1) % sample_every == 0.
    """
    if steps < 1 or steps > trace.n_steps:
        raise SolverError(f"Requested {steps} steps from a trace of {trace.n_steps}")
    if sample_every < 1 or steps < sample_every:
        raise SolverError(f"sample_every={sample_every} records nothing in {steps} steps")

    theta = np.zeros(grid.n_cells) if theta0 is None else grid.check_field(theta0, 'theta0').copy()
    loads = unit_load_matrix(overlap, grid)
    power = aligned_power(trace, overlap)
    solver = FomSolver(ops, tol=tol)
    dt = trace.dt_sample / substeps

    n_samples = steps // sample_every
    S = np.empty((grid.n_cells, n_samples))
    times = np.empty(n_samples)

    start = time.perf_counter()
    column = 0
    for n in range(steps):
        heat = loads @ power[n]
        for _ in range(substeps):
            theta = solver.advance(theta, heat, dt)
        if (n + 1) % sample_every == 0:
            S[:, column] = theta
            times[column] = (n + 1) * trace.dt_sample
            column += 1
    wall = time.perf_counter() - start

    logger.info(f"FOM: {steps} steps on {grid.n_cells} cells in {wall:.3f} s, {n_samples} snapshots")
    return SnapshotSet(
        S=S,
        times=times,
        grid=grid,
        final=ThermalState(theta=theta, t=steps * trace.dt_sample),
        wall_seconds=wall,
    )


def steady_state(ops: FomOperators, load: LoadField, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Solve A theta = q * V"""
    if ops.h == 0:
        raise SolverError("Steady state is singular with an adiabatic bottom (h = 0)")
    solver = FomSolver(ops, tol=tol)
    precond = sparse.diags(1.0 / ops.A.diagonal())
    return solver.solve(ops.A, load.heat, np.zeros(ops.n_cells), precond)


def save_snapshots(snaps: SnapshotSet, path: Union[str, Path]):
    """Snapshot container: N_cells, Ns, sample times, then the column-major matrix"""
    with atomic_write(path) as f:
        writer = PodtWriter(f, KIND_SNAPSHOTS, snaps.grid.grid_hash)
        writer.counts(snaps.S.shape[0], snaps.S.shape[1])
        writer.floats(snaps.times)
        writer.floats(snaps.S)
    logger.info(f"Saved {snaps.n_snapshots} snapshots to {path}")


def load_snapshots(path: Union[str, Path], grid: Grid) -> SnapshotSet:
    reader = PodtReader(path, KIND_SNAPSHOTS)
    n_cells, n_snaps = reader.counts(2)
    if n_cells != grid.n_cells or reader.grid_hash != grid.grid_hash:
        raise GeometryError(
            f"Snapshots in {path} belong to a {n_cells}-cell grid (hash {reader.grid_hash:016x}), "
            f"config grid has {grid.n_cells} cells (hash {grid.grid_hash:016x})"
        )
    times = reader.floats(n_snaps)
    S = reader.floats((n_cells, n_snaps))
    reader.finish()
    return SnapshotSet(S=S, times=times, grid=grid)

"""
Mode-count convergence and extrapolation studies.

Each mode count is an independent job: truncate the trained basis, project the
operators and loads, integrate, and compare against the FOM reference step by
step. Errors are accumulated in chunks so whole-chip reconstructions of long
windows never sit in memory at once.
"""

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from rom_service.errors import ConfigError
from rom_service.evaluation.metrics import ErrorReport, ls_integrals
from rom_service.evaluation.speedup import StageTimings
from rom_service.fom.operators import FomOperators
from rom_service.fom.solver import DEFAULT_TOL, SnapshotSet, simulate
from rom_service.geometry.floorplan import OverlapMap
from rom_service.geometry.grid import Grid, Region
from rom_service.pod.basis import PodBasis, Spectrum, theoretical_error, train_pod
from rom_service.power.traces import PowerTrace
from rom_service.rom.galerkin import project_load, project_system, reconstruct_series, rom_simulate

logger = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ['M', 'err_theo', 'err_num_chip', 'err_num_heat', 'eval_window_s']
EXTRAPOLATION_COLUMNS = [
    'M', 'err_theo',
    'err_interp_chip', 'err_extrap_chip', 'gap_chip',
    'err_interp_heat', 'err_extrap_heat', 'gap_heat',
]
DEFAULT_CHUNK = 256

CHIP = Region('chip')
HEATING = Region('heating')


@dataclass(frozen=True)
class Scenario:
    """Everything needed to run the FOM and the ROM on one chip"""

    ops: FomOperators
    overlap: OverlapMap
    train_trace: PowerTrace
    eval_trace: Optional[PowerTrace] = None
    substeps: int = 1
    sample_every: int = 1
    tol: float = DEFAULT_TOL

    @property
    def grid(self) -> Grid:
        return self.ops.grid

    @property
    def held_out(self) -> PowerTrace:
        """Evaluation trace; the training trace when none is held out"""
        return self.train_trace if self.eval_trace is None else self.eval_trace

    def run_fom(self, trace: PowerTrace, steps: int, sample_every: Optional[int] = None) -> SnapshotSet:
        return simulate(
            None, self.ops, trace, self.overlap, self.grid, steps,
            sample_every=self.sample_every if sample_every is None else sample_every,
            substeps=self.substeps, tol=self.tol,
        )


@dataclass(frozen=True)
class ModeCountResult:
    M: int
    err_theo: float
    chip: ErrorReport
    heat: ErrorReport
    timings: StageTimings


def resolve_mode_counts(m_list: Sequence[int], retained: int) -> List[int]:
    """Cap requested mode counts at the retained count, keeping order"""
    counts = []
    for M in m_list:
        if M < 1:
            raise ConfigError(f"Mode counts must be positive, got {M}")
        if M > retained:
            logger.warning(f"Requested {M} modes, capping at {retained} retained")
            M = retained
        counts.append(M)
    return counts


def _evaluate_mode_count(basis: PodBasis, spectrum: Spectrum, scenario: Scenario, trace: PowerTrace,
                         reference: SnapshotSet, M: int, steps: int, chunk: int) -> ModeCountResult:
    basis = basis.truncate(M)
    grid = scenario.grid
    system = project_system(scenario.ops, basis)
    loads = project_load(basis, trace, scenario.overlap, grid)
    dt = trace.dt_sample / scenario.substeps
    trajectory = rom_simulate(system, loads, None, dt, steps, substeps=scenario.substeps)

    post1 = post2 = 0.0
    parts = {CHIP.label: [], HEATING.label: []}
    for start in range(0, steps, chunk):
        stop = min(start + chunk, steps)
        a = trajectory.a[start + 1:stop + 1]

        tick = time.perf_counter()
        heat_fields = reconstruct_series(basis, a, HEATING)
        post1 += time.perf_counter() - tick

        tick = time.perf_counter()
        chip_fields = reconstruct_series(basis, a, CHIP)
        post2 += time.perf_counter() - tick

        ref = reference.S[:, start:stop]
        parts[HEATING.label].append(ls_integrals(ref, heat_fields, grid, HEATING))
        parts[CHIP.label].append(ls_integrals(ref, chip_fields, grid, CHIP))

    reports = {}
    for label, chunks in parts.items():
        num = np.concatenate([c[0] for c in chunks])
        den = np.concatenate([c[1] for c in chunks])
        reports[label] = ErrorReport.from_integrals(num, den, region=label, M=M)

    timings = StageTimings(
        M=M, ode_s=trajectory.ode_seconds, post1_s=post1, post2_s=post2,
        fom_s=reference.wall_seconds, steps=steps, n_cells=grid.n_cells,
    )
    return ModeCountResult(
        M=M,
        err_theo=theoretical_error(spectrum, M),
        chip=reports[CHIP.label],
        heat=reports[HEATING.label],
        timings=timings,
    )


def evaluate_mode_counts(basis: PodBasis, spectrum: Spectrum, scenario: Scenario, trace: PowerTrace,
                         reference: SnapshotSet, m_list: Sequence[int], n_jobs: int = 1,
                         chunk: int = DEFAULT_CHUNK) -> List[ModeCountResult]:
    """
    Compare the ROM for each M against a FOM reference recorded at every step.

    Results come back in m_list order whatever n_jobs is. Stage timings measured
    with n_jobs > 1 share the machine and overstate the ROM cost.
    """
    steps = reference.n_snapshots
    expected = (np.arange(steps) + 1) * trace.dt_sample
    if not np.allclose(reference.times, expected, rtol=1e-12, atol=0.0):
        raise ConfigError("Reference snapshots must be recorded at every trace step")

    counts = resolve_mode_counts(m_list, basis.M)
    results = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_evaluate_mode_count)(basis, spectrum, scenario, trace, reference, M, steps, chunk)
        for M in counts
    )
    for r in results:
        logger.info(
            f"  M={r.M}: err_theo={r.err_theo:.4e}, err_num chip={r.chip.err_num:.4e}, "
            f"heating={r.heat.err_num:.4e}"
        )
    return results


def _check_windows(scenario: Scenario, train_steps: int, eval_steps: int, eval_trace: PowerTrace):
    if train_steps < 1 or train_steps > eval_steps:
        raise ConfigError(f"Training window ({train_steps} steps) must be within the evaluation window ({eval_steps})")
    if train_steps > scenario.train_trace.n_steps:
        raise ConfigError(f"Training window {train_steps} exceeds the {scenario.train_trace.n_steps}-step trace")
    if eval_steps > eval_trace.n_steps:
        raise ConfigError(f"Evaluation window {eval_steps} exceeds the {eval_trace.n_steps}-step trace")


def train_on_window(scenario: Scenario, train_steps: int) -> Tuple[PodBasis, Spectrum, SnapshotSet]:
    snaps = scenario.run_fom(scenario.train_trace, train_steps)
    basis, spectrum = train_pod(snaps)
    return basis, spectrum, snaps


def convergence_frame(results: Sequence[ModeCountResult], eval_window_s: float) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                'M': r.M,
                'err_theo': r.err_theo,
                'err_num_chip': r.chip.err_num,
                'err_num_heat': r.heat.err_num,
                'eval_window_s': eval_window_s,
            }
            for r in results
        ],
        columns=CONVERGENCE_COLUMNS,
    )


def convergence_sweep(scenario: Scenario, m_list: Sequence[int], train_steps: int, eval_steps: int,
                      n_jobs: int = 1) -> pd.DataFrame:
    """
    Err_Theo and Err_Num per mode count.

    Trains on the first train_steps of the training trace and evaluates over
    the first eval_steps of the held-out trace.
    """
    eval_trace = scenario.held_out
    _check_windows(scenario, train_steps, eval_steps, eval_trace)

    basis, spectrum, _ = train_on_window(scenario, train_steps)
    reference = scenario.run_fom(eval_trace, eval_steps, sample_every=1)
    results = evaluate_mode_counts(basis, spectrum, scenario, eval_trace, reference, m_list, n_jobs=n_jobs)
    return convergence_frame(results, eval_steps * eval_trace.dt_sample)


def extrapolation_frame(results: Sequence[ModeCountResult], train_steps: int) -> pd.DataFrame:
    rows = []
    for r in results:
        row = {'M': r.M, 'err_theo': r.err_theo}
        for name, report in (('chip', r.chip), ('heat', r.heat)):
            interp = report.head(train_steps).err_num
            row[f'err_interp_{name}'] = interp
            row[f'err_extrap_{name}'] = report.err_num
            row[f'gap_{name}'] = report.err_num - interp
        rows.append(row)
    return pd.DataFrame(rows, columns=EXTRAPOLATION_COLUMNS)


def extrapolation_study(scenario: Scenario, m_list: Sequence[int], train_steps: int, eval_steps: int,
                        n_jobs: int = 1) -> pd.DataFrame:
    """
    Interpolation versus extrapolation error on the training trace.

    The ROM runs once over eval_steps; the interpolation error is the same
    aggregate restricted to the training window.
    """
    trace = scenario.train_trace
    _check_windows(scenario, train_steps, eval_steps, trace)

    basis, spectrum, _ = train_on_window(scenario, train_steps)
    reference = scenario.run_fom(trace, eval_steps, sample_every=1)
    results = evaluate_mode_counts(basis, spectrum, scenario, trace, reference, m_list, n_jobs=n_jobs)
    return extrapolation_frame(results, train_steps)

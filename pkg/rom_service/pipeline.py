"""
Pipeline stages behind the command-line subcommands.

Each stage reads its inputs from the run config and the output directory and
writes its artifacts atomically, so `validate` produces the same files as
running fom-run, pod-train and the sweep by hand.
"""

import logging
import time
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from rom_service.config.settings import RunConfig
from rom_service.errors import ConfigError, PodError
from rom_service.evaluation.probes import ProbeResult, line_profile, locate_point, mode_profiles
from rom_service.evaluation.speedup import speedup_report
from rom_service.evaluation.sweep import (
    Scenario,
    convergence_frame,
    evaluate_mode_counts,
    extrapolation_frame,
)
from rom_service.fom.operators import FomOperators, assemble_operators
from rom_service.fom.solver import SnapshotSet, load_snapshots, save_snapshots, simulate
from rom_service.geometry.floorplan import Floorplan, OverlapMap, load_floorplan, unit_cell_overlap
from rom_service.geometry.grid import Grid, Region, build_grid
from rom_service.pod.basis import (
    PodBasis,
    Spectrum,
    build_modes,
    correlation_matrix,
    eigendecompose,
    load_basis,
    save_basis,
    theoretical_error,
)
from rom_service.power.traces import PowerTrace, load_power_trace, save_power_trace, synth_trace
from rom_service.rom.galerkin import (
    FieldRecords,
    RomTrajectory,
    field_slice_frame,
    project_load,
    project_system,
    reconstruct,
    reconstruct_series,
    rom_simulate,
    save_fields,
)
from rom_service.storage.reports import write_csv, write_manifest

logger = logging.getLogger(__name__)

SNAPSHOTS_TRAIN = 'snapshots_train.podt'
SNAPSHOTS_EVAL = 'snapshots_eval.podt'
BASIS = 'basis.podt'
SPECTRUM = 'spectrum.csv'
TRAJECTORY = 'trajectory.csv'
CONVERGENCE = 'convergence.csv'
EXTRAPOLATION = 'extrapolation.csv'
SPEEDUP = 'speedup.csv'
TRACE_TRAIN = 'trace_train.csv'
TRACE_EVAL = 'trace_eval.csv'

_DT_RTOL = 1e-12


@dataclass
class Workspace:
    """Objects every stage derives from one config"""

    config: RunConfig
    grid: Grid
    floorplan: Floorplan
    overlap: OverlapMap
    ops: FomOperators
    out_dir: Path
    threads: int

    def path(self, name: str) -> Path:
        return self.out_dir / name

    @cached_property
    def scenario(self) -> Scenario:
        return Scenario(
            ops=self.ops,
            overlap=self.overlap,
            train_trace=training_trace(self),
            eval_trace=evaluation_trace(self),
            substeps=self.config.substeps,
            sample_every=self.config.sample_every,
            tol=self.config.fom_tol,
        )


def prepare(config: RunConfig, out_dir: Optional[Path] = None, threads: Optional[int] = None) -> Workspace:
    """Grid, floorplan overlap and FOM operators for a config"""
    grid = build_grid(config.grid_spec())
    floorplan = load_floorplan(config.floorplan, grid.spec)
    overlap = unit_cell_overlap(floorplan, grid)
    ops = assemble_operators(grid, config.materials(grid), config.boundary())

    out = config.resolved_out_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"Workspace: {grid.n_cells} cells, {len(floorplan.units)} units, output in {out}")
    return Workspace(
        config=config, grid=grid, floorplan=floorplan, overlap=overlap, ops=ops,
        out_dir=out, threads=config.resolved_threads(threads),
    )


def _checked(trace: PowerTrace, config: RunConfig, steps: int, source: str) -> PowerTrace:
    if abs(trace.dt_sample - config.dt) > _DT_RTOL * config.dt:
        raise ConfigError(f"{source} samples every {trace.dt_sample} s, config dt is {config.dt} s")
    if trace.n_steps < steps:
        raise ConfigError(f"{source} has {trace.n_steps} steps, the run needs {steps}")
    return trace


def training_trace(ws: Workspace) -> PowerTrace:
    """Trace file from the config, or a seeded synthetic trace saved beside the outputs"""
    config = ws.config
    steps = max(config.train_steps, config.eval_steps)
    if config.trace is not None:
        # without a held-out trace the evaluation window runs on this one too
        held_out = config.eval_trace is not None or config.eval_seed is not None
        needed = config.train_steps if held_out else steps
        return _checked(load_power_trace(config.trace, ws.floorplan), config, needed, str(config.trace))

    trace = synth_trace(config.synth_spec(ws.floorplan.unit_names, steps, config.seed))
    save_power_trace(trace, ws.path(TRACE_TRAIN))
    return trace


def evaluation_trace(ws: Workspace) -> Optional[PowerTrace]:
    """Held-out trace, or None to evaluate on the training trace"""
    config = ws.config
    if config.eval_trace is not None:
        return _checked(load_power_trace(config.eval_trace, ws.floorplan), config, config.eval_steps,
                        str(config.eval_trace))
    if config.eval_seed is not None:
        trace = synth_trace(config.synth_spec(ws.floorplan.unit_names, config.eval_steps, config.eval_seed))
        save_power_trace(trace, ws.path(TRACE_EVAL))
        return trace
    return None


def _manifest(ws: Workspace, stage: str, **values) -> Dict:
    manifest = {
        'stage': stage,
        'config_hash': ws.config.config_hash(),
        'grid_hash': f'{ws.grid.grid_hash:016x}',
        'n_cells': ws.grid.n_cells,
    }
    manifest.update(values)
    return manifest


def cmd_fom_run(ws: Workspace, window: str = 'train') -> SnapshotSet:
    """
    FOM run over the training window (snapshots every sample_every steps) or
    the evaluation window (every step, on the held-out trace).
    """
    config = ws.config
    scenario = ws.scenario
    if window == 'train':
        trace, steps, every, name = scenario.train_trace, config.train_steps, config.sample_every, SNAPSHOTS_TRAIN
    elif window == 'eval':
        trace, steps, every, name = scenario.held_out, config.eval_steps, 1, SNAPSHOTS_EVAL
        if steps > trace.n_steps:
            raise ConfigError(f"Evaluation window {steps} exceeds the {trace.n_steps}-step trace")
    else:
        raise ConfigError(f"Unknown FOM window {window!r}")

    logger.info(f"Step 1: FOM {window} run, {steps} steps of {config.dt} s")
    snaps = simulate(None, ws.ops, trace, ws.overlap, ws.grid, steps,
                     sample_every=every, substeps=config.substeps, tol=config.fom_tol)

    logger.info(f"Step 2: Saving {snaps.n_snapshots} snapshots")
    path = ws.path(name)
    save_snapshots(snaps, path)
    write_manifest(
        _manifest(ws, f'fom-run-{window}', steps=steps, substeps=config.substeps, sample_every=every,
                  n_snapshots=snaps.n_snapshots, wall_seconds=snaps.wall_seconds, snapshots=path.name),
        path.with_suffix('.json'),
    )
    return snaps


def cmd_pod_train(ws: Workspace, snapshots: Sequence[Path] = ()) -> Tuple[PodBasis, Spectrum]:
    """
    Train modes on one or more snapshot files.

    Several files are pooled into one ensemble. The saved basis holds
    min(retained, max(m_list)) modes; the spectrum CSV lists every retained mode.
    """
    paths = list(snapshots) or [ws.path(SNAPSHOTS_TRAIN)]
    logger.info(f"Step 1: Loading snapshots from {len(paths)} file(s)")
    snaps = SnapshotSet.concat([load_snapshots(p, ws.grid) for p in paths])

    logger.info(f"Step 2: Training POD on {snaps.n_snapshots} snapshots")
    spectrum, V = eigendecompose(correlation_matrix(snaps))
    basis = build_modes(snaps, spectrum, V, min(spectrum.retained, max(ws.config.m_list)))

    logger.info(f"Step 3: Saving {basis.M}-mode basis and spectrum")
    save_basis(basis, ws.path(BASIS))
    write_csv(spectrum.to_frame(), ws.path(SPECTRUM))
    logger.info(f"Retained {spectrum.retained} modes")
    print(err_theo_table(spectrum, ws.config.m_list).to_string(index=False))
    return basis, spectrum


def err_theo_table(spectrum: Spectrum, m_list: Sequence[int]) -> pd.DataFrame:
    counts = [min(M, spectrum.retained) for M in m_list]
    return pd.DataFrame({'M': counts, 'err_theo': [theoretical_error(spectrum, M) for M in counts]})


def _load_truncated(ws: Workspace, basis_path: Optional[Path], M: Optional[int]) -> PodBasis:
    basis = load_basis(basis_path or ws.path(BASIS), ws.grid)
    M = max(ws.config.m_list) if M is None else M
    if M > basis.M:
        logger.warning(f"Requested {M} modes, basis holds {basis.M}")
        M = basis.M
    if M < 1:
        raise PodError("Basis holds no modes")
    return basis.truncate(M)


def record_steps(steps: int, every: Optional[int]) -> np.ndarray:
    """Trajectory rows to reconstruct: the final one, or every k-th step"""
    if every is None:
        return np.array([steps])
    return np.arange(every, steps + 1, every)


@dataclass(frozen=True)
class RomRun:
    trajectory: RomTrajectory
    M: int
    steps: int
    post_seconds: Dict[str, float]
    field_paths: List[Path]


def _rom_trajectory(ws: Workspace, basis: PodBasis) -> Tuple[RomTrajectory, PowerTrace]:
    config = ws.config
    trace = ws.scenario.held_out
    system = project_system(ws.ops, basis)
    loads = project_load(basis, trace, ws.overlap, ws.grid)
    trajectory = rom_simulate(system, loads, None, config.dt / config.substeps, config.eval_steps,
                              substeps=config.substeps)
    return trajectory, trace


def cmd_rom_run(ws: Workspace, basis_path: Optional[Path] = None, M: Optional[int] = None) -> RomRun:
    """
    Integrate the ROM over the evaluation window and reconstruct each configured
    region at the configured cadence. Post-process timers cover reconstruction
    only; the ODE timer covers the integration loop only.
    """
    config = ws.config
    logger.info("Step 1: Loading basis and projecting the system")
    basis = _load_truncated(ws, basis_path, M)

    logger.info(f"Step 2: Integrating {config.eval_steps} steps with {basis.M} modes")
    trajectory, _ = _rom_trajectory(ws, basis)
    write_csv(trajectory.to_frame(), ws.path(TRAJECTORY))

    logger.info(f"Step 3: Reconstructing {', '.join(config.regions)} at cadence {config.cadence}")
    rows = record_steps(config.eval_steps, config.cadence_every)
    a = trajectory.a[rows]
    post_seconds, field_paths = {}, []
    for region in config.region_list():
        tick = time.perf_counter()
        values = reconstruct_series(basis, a, region) + config.t_amb
        post_seconds[region.label] = time.perf_counter() - tick

        path = ws.path(f'fields_{region.label}.podt')
        save_fields(FieldRecords(values=values, times=trajectory.times[rows], region=region,
                                 grid_hash=ws.grid.grid_hash), path)
        field_paths.append(path)

    final = reconstruct(basis, trajectory.a[-1], Region('chip'), t_amb=config.t_amb)
    write_csv(field_slice_frame(final, ws.grid, layer=0), ws.path('slice_layer0.csv'))

    write_manifest(
        _manifest(ws, 'rom-run', M=basis.M, steps=config.eval_steps, records=int(rows.size),
                  ode_seconds=trajectory.ode_seconds, post_seconds=post_seconds),
        ws.path('rom_run.json'),
    )
    logger.info(f"ROM ODE stage {trajectory.ode_seconds:.4e} s, post-processing "
                + ', '.join(f'{k} {v:.4e} s' for k, v in post_seconds.items()))
    return RomRun(trajectory=trajectory, M=basis.M, steps=config.eval_steps,
                  post_seconds=post_seconds, field_paths=field_paths)


def cmd_validate(ws: Workspace) -> Dict[str, pd.DataFrame]:
    """
    FOM training run, POD, FOM evaluation run, then the ROM for every M in
    m_list against the evaluation reference.
    """
    config = ws.config
    scenario = ws.scenario

    logger.info("=== Validation Started ===")
    cmd_fom_run(ws, 'train')
    basis, spectrum = cmd_pod_train(ws)
    reference = cmd_fom_run(ws, 'eval')

    logger.info(f"Step 3: Evaluating M in {config.m_list} on {ws.threads} thread(s)")
    trace = scenario.held_out
    results = evaluate_mode_counts(basis, spectrum, scenario, trace, reference, config.m_list,
                                   n_jobs=ws.threads)

    logger.info("Step 4: Writing reports")
    tables = {
        CONVERGENCE: convergence_frame(results, config.eval_steps * trace.dt_sample),
        SPEEDUP: speedup_report([r.timings for r in results]),
    }
    if scenario.eval_trace is None and config.eval_steps > config.train_steps:
        tables[EXTRAPOLATION] = extrapolation_frame(results, config.train_steps)
    for name, df in tables.items():
        write_csv(df, ws.path(name))

    logger.info("=== Validation Completed ===")
    return tables


def _reference(ws: Workspace) -> Optional[SnapshotSet]:
    path = ws.path(SNAPSHOTS_EVAL)
    if not path.exists():
        logger.warning(f"No FOM reference at {path}; run fom-run --window eval to compare")
        return None
    return load_snapshots(path, ws.grid)


def cmd_probe(ws: Workspace, kind: str, x: float = 0.0, y: float = 0.0, layer: int = 0,
              axis: str = 'x', offset: float = 0.0, M: Optional[int] = None,
              basis_path: Optional[Path] = None) -> pd.DataFrame:
    """
    Probe the ROM over the evaluation window, against the FOM evaluation
    snapshots when present.

    point: one cell over time. line: a path through the final field.
    modes: mode values and gradients along a path.
    """
    config = ws.config
    basis = _load_truncated(ws, basis_path, M)

    if kind == 'modes':
        df = mode_profiles(basis, axis, offset, layer)
        write_csv(df, ws.path(f'mode_profiles_{axis}.csv'))
        return df

    trajectory, _ = _rom_trajectory(ws, basis)
    reference = _reference(ws)
    if reference is not None and reference.n_snapshots != config.eval_steps:
        raise ConfigError(f"Reference has {reference.n_snapshots} records, evaluation window {config.eval_steps}")

    if kind == 'point':
        cell, location = locate_point(ws.grid, x, y, layer)
        values = basis.phi[cell] @ trajectory.a[1:].T + config.t_amb
        ref = None if reference is None else reference.S[cell] + config.t_amb
        result = ProbeResult(kind='point-evolution', coordinates=trajectory.times[1:], values=values,
                             location=location, reference=ref, t_amb=config.t_amb)
        name = 'probe_point.csv'
    elif kind == 'line':
        final = reconstruct(basis, trajectory.a[-1], Region('chip'), t_amb=config.t_amb)
        ref = None if reference is None else reference.S[:, -1] + config.t_amb
        result = line_profile(final, ws.grid, axis, offset, layer, reference=ref, t_amb=config.t_amb)
        name = f'probe_line_{axis}.csv'
    else:
        raise ConfigError(f"Unknown probe kind {kind!r}")

    df = result.to_frame()
    write_csv(df, ws.path(name))
    if result.reference is not None:
        logger.info(f"Probe {kind} at {result.location}: max abs error {np.max(result.abs_error):.4e} K")
    return df


def cmd_spectrum(ws: Workspace, basis_path: Optional[Path] = None) -> pd.DataFrame:
    """Spectrum CSV and Err_Theo table from a saved basis"""
    basis = load_basis(basis_path or ws.path(BASIS), ws.grid)
    spectrum = basis.spectrum()
    df = spectrum.to_frame()
    write_csv(df, ws.path(SPECTRUM))
    print(err_theo_table(spectrum, ws.config.m_list).to_string(index=False))
    return df

"""
Per-unit dynamic power traces: CSV ingestion, export and seeded synthesis.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Literal, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from rom_service.errors import PowerTraceError
from rom_service.geometry.floorplan import Floorplan
from rom_service.storage.podt import atomic_write

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerTrace:
    """Power in watts, one row per sampling interval, one column per unit"""

    dt_sample: float
    unit_names: Tuple[str, ...]
    power: np.ndarray = field(repr=False)

    def __post_init__(self):
        power = np.array(self.power, dtype=np.float64, ndmin=2)
        if self.dt_sample <= 0 or not np.isfinite(self.dt_sample):
            raise PowerTraceError(f"Sampling interval must be positive, got {self.dt_sample}")
        if power.shape[1] != len(self.unit_names):
            raise PowerTraceError(
                f"Trace has {power.shape[1]} columns for {len(self.unit_names)} unit names"
            )
        if len(set(self.unit_names)) != len(self.unit_names):
            raise PowerTraceError("Trace unit names must be unique")
        if not np.all(np.isfinite(power)):
            raise PowerTraceError("Trace contains non-finite power values")
        if np.any(power < 0):
            raise PowerTraceError("Trace contains negative power values")
        power.setflags(write=False)
        object.__setattr__(self, 'unit_names', tuple(self.unit_names))
        object.__setattr__(self, 'power', power)

    @property
    def n_steps(self) -> int:
        return self.power.shape[0]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt_sample

    def window(self, start: int, stop: int) -> 'PowerTrace':
        """Rows start..stop-1 as a new trace"""
        if not 0 <= start < stop <= self.n_steps:
            raise PowerTraceError(f"Window [{start}, {stop}) outside trace of {self.n_steps} steps")
        return PowerTrace(self.dt_sample, self.unit_names, self.power[start:stop])

    def concat(self, other: 'PowerTrace') -> 'PowerTrace':
        if other.unit_names != self.unit_names or other.dt_sample != self.dt_sample:
            raise PowerTraceError("Only traces with identical units and sampling can be concatenated")
        return PowerTrace(self.dt_sample, self.unit_names, np.vstack([self.power, other.power]))

    def power_for(self, unit_names: Sequence[str]) -> np.ndarray:
        """
        Power matrix with columns in the given unit order.

        Units without a trace column draw no power; trace columns must all name
        one of the given units.
        """
        unknown = [name for name in self.unit_names if name not in unit_names]
        if unknown:
            raise PowerTraceError(f"Trace units not in floorplan: {', '.join(unknown)}")
        aligned = np.zeros((self.n_steps, len(unit_names)))
        for source, name in enumerate(self.unit_names):
            aligned[:, list(unit_names).index(name)] = self.power[:, source]
        return aligned


def load_power_trace(path: Union[str, Path], floorplan: Floorplan) -> PowerTrace:
    """
    Read a trace CSV.

    Line 1: dt_s=<float>. Line 2: step,<unit1>,<unit2>,... Then one row per
    step, an integer step index followed by watts.
    """
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline().strip()

    key, _, value = first.partition('=')
    if key.strip() != 'dt_s':
        raise PowerTraceError(f"{path}: first line must be dt_s=<seconds>, got {first!r}")
    try:
        dt_sample = float(value)
    except ValueError:
        raise PowerTraceError(f"{path}: bad sampling interval {value!r}") from None

    try:
        df = pd.read_csv(path, skiprows=1, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise PowerTraceError(f"Malformed trace {path}: {e}") from e

    df.columns = [str(column).strip() for column in df.columns]
    if not df.columns.size or df.columns[0] != 'step':
        raise PowerTraceError(f"{path}: header must start with 'step'")
    units = list(df.columns[1:])
    unknown = [name for name in units if name not in floorplan.unit_names]
    if unknown:
        raise PowerTraceError(f"{path}: columns not in floorplan: {', '.join(unknown)}")
    if df.isna().any().any():
        bad_rows = (df.index[df.isna().any(axis=1)] + 1).tolist()
        raise PowerTraceError(f"{path}: ragged or empty rows {bad_rows}")

    try:
        power = df[units].apply(pd.to_numeric, errors='raise').to_numpy(np.float64)
        steps = pd.to_numeric(df['step'], errors='raise').to_numpy()
    except (ValueError, TypeError) as e:
        raise PowerTraceError(f"{path}: non-numeric entries: {e}") from e
    if not np.all(np.equal(np.mod(steps, 1), 0)):
        raise PowerTraceError(f"{path}: step column must hold integers")

    trace = PowerTrace(dt_sample=dt_sample, unit_names=tuple(units), power=power)
    logger.info(
        f"Loaded trace {path.name}: {trace.n_steps} steps x {len(units)} units, "
        f"dt={dt_sample:.4g} s ({trace.duration:.4g} s)"
    )
    return trace


def save_power_trace(trace: PowerTrace, path: Union[str, Path]):
    """Write a trace in the format load_power_trace reads"""
    df = pd.DataFrame(trace.power, columns=list(trace.unit_names))
    df.insert(0, 'step', np.arange(trace.n_steps))
    with atomic_write(path, 'w') as f:
        f.write(f"dt_s={trace.dt_sample!r}\n")
        df.to_csv(f, index=False, float_format='%.17g', lineterminator='\n')


class WaveformSpec(BaseModel):
    """
    One unit's synthetic power waveform (watts, periods in steps).

    - constant: base + amplitude
    - square:   base + amplitude during the first duty*period steps of each period
    - ramp:     sawtooth from base to base + amplitude over each period
    - random:   piecewise constant, a uniform draw in [base, base + amplitude) per period

    `phase` shifts the square and ramp patterns by that many steps.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal['constant', 'square', 'ramp', 'random'] = 'constant'
    amplitude: float = Field(1.0, ge=0)
    base: float = Field(0.0, ge=0)
    period: int = Field(2, ge=1)
    duty: float = Field(0.5, gt=0, lt=1)
    phase: int = Field(0, ge=0)
    seed: int = 0

    def sample(self, steps: int) -> np.ndarray:
        n = np.arange(steps) + self.phase
        if self.kind == 'constant':
            values = np.full(steps, self.amplitude)
        elif self.kind == 'square':
            values = np.where((n % self.period) < self.duty * self.period, self.amplitude, 0.0)
        elif self.kind == 'ramp':
            values = self.amplitude * (n % self.period) / max(self.period - 1, 1)
        else:
            rng = np.random.default_rng(self.seed)
            levels = rng.random(-(-steps // self.period))
            values = self.amplitude * np.repeat(levels, self.period)[:steps]
        return self.base + values


class TraceSynthSpec(BaseModel):
    units: Tuple[str, ...]
    steps: int = Field(..., ge=1)
    dt: float = Field(..., gt=0)
    waveforms: Dict[str, WaveformSpec]

    @model_validator(mode='after')
    def check_waveforms(self):
        missing = [name for name in self.units if name not in self.waveforms]
        if missing:
            raise ValueError(f"No waveform for units: {', '.join(missing)}")
        return self


def synth_trace(spec: Union[TraceSynthSpec, dict]) -> PowerTrace:
    """Deterministic benchmark-like trace from seeded waveform parameters"""
    if not isinstance(spec, TraceSynthSpec):
        spec = TraceSynthSpec(**spec)

    power = np.column_stack([spec.waveforms[name].sample(spec.steps) for name in spec.units])
    logger.debug(f"Synthesized {spec.steps}-step trace for {len(spec.units)} units")
    return PowerTrace(dt_sample=spec.dt, unit_names=spec.units, power=power)

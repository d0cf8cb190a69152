"""
Configuration management.

Process settings come from environment variables (a .env file is loaded if
present). Run settings come from a flat `key = value` file validated by
RunConfig; `--override key=value` entries are applied on top.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from rom_service.errors import ConfigError, GeometryError
from rom_service.geometry.grid import (
    DEFAULT_K,
    DEFAULT_RHO_C,
    BoundarySpec,
    Grid,
    GridSpec,
    MaterialField,
    Region,
    layered_materials,
)
from rom_service.power.traces import TraceSynthSpec, WaveformSpec

load_dotenv()

logger = logging.getLogger(__name__)

PATH_KEYS = ('floorplan', 'trace', 'eval_trace', 'out_dir')
DIVISIBILITY_RTOL = 1e-9
WAVEFORM_KINDS = ('constant', 'square', 'ramp', 'random')


@dataclass
class LoggingConfig:
    level: str = os.getenv('PODTHERM_LOG_LEVEL', 'INFO')


@dataclass
class RuntimeConfig:
    """Defaults for values a run config or the command line may override"""
    threads: int = int(os.getenv('PODTHERM_THREADS', '1'))
    out_dir: str = os.getenv('PODTHERM_OUT_DIR', './out')


class Settings:
    """Main settings object"""
    def __init__(self):
        self.logging = LoggingConfig()
        self.runtime = RuntimeConfig()


settings = Settings()


def _steps_in(duration: float, dt: float, name: str) -> int:
    steps = int(round(duration / dt))
    if steps < 1 or abs(steps * dt - duration) > DIVISIBILITY_RTOL * duration:
        raise ValueError(f"{name}={duration} s is not a whole number of dt={dt} s steps")
    return steps


class RunConfig(BaseModel):
    """Validated run configuration. Lengths are given in mm and um as in the file."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    # inputs and outputs
    floorplan: Path
    trace: Optional[Path] = None
    eval_trace: Optional[Path] = None
    out_dir: Optional[Path] = None

    # grid
    nx: int = Field(..., ge=1)
    ny: int = Field(..., ge=1)
    nz_heat: int = Field(..., ge=1)
    nz_sub: int = Field(..., ge=1)
    len_x_mm: float = Field(31.0, gt=0)
    len_y_mm: float = Field(21.5, gt=0)
    t_heat_um: float = Field(55.8, gt=0)
    t_sub_um: float = Field(241.8, gt=0)

    # materials and boundary
    k_heat: float = Field(DEFAULT_K, gt=0)
    k_sub: float = Field(DEFAULT_K, gt=0)
    rhoc_heat: float = Field(DEFAULT_RHO_C, gt=0)
    rhoc_sub: float = Field(DEFAULT_RHO_C, gt=0)
    h: float = Field(2.0e4, ge=0)
    t_amb: float = 318.15

    # time windows
    dt: float = Field(..., gt=0)
    substeps: int = Field(1, ge=1)
    train_s: float = Field(..., gt=0)
    eval_s: Optional[float] = Field(None, gt=0)
    sample_every: int = Field(1, ge=1)

    # model and outputs
    m_list: List[int] = Field(default_factory=lambda: [1, 3, 5, 7])
    regions: List[str] = Field(default_factory=lambda: ['heating', 'chip'])
    cadence: str = 'final'

    # synthetic traces
    seed: int = 0
    eval_seed: Optional[int] = None
    synth_waveforms: List[str] = Field(default_factory=lambda: ['square', 'ramp'])
    synth_amplitude_w: float = Field(5.0, ge=0)
    synth_base_w: float = Field(0.5, ge=0)
    synth_period_steps: int = Field(100, ge=1)

    fom_tol: float = Field(1e-10, gt=0, lt=1)
    threads: Optional[int] = Field(None, ge=1)

    @field_validator('m_list', 'regions', 'synth_waveforms', mode='before')
    @classmethod
    def split_commas(cls, value):
        if isinstance(value, str):
            return [item.strip() for item in value.split(',') if item.strip()]
        return value

    @field_validator('m_list')
    @classmethod
    def check_modes(cls, value):
        if not value or min(value) < 1:
            raise ValueError("m_list needs at least one positive mode count")
        return value

    @field_validator('regions')
    @classmethod
    def check_regions(cls, value):
        for text in value:
            try:
                Region.parse(text)
            except GeometryError as e:
                raise ValueError(str(e)) from None
        return value

    @field_validator('synth_waveforms')
    @classmethod
    def check_waveforms(cls, value):
        unknown = [kind for kind in value if kind not in WAVEFORM_KINDS]
        if not value or unknown:
            raise ValueError(f"synth_waveforms must be drawn from {', '.join(WAVEFORM_KINDS)}")
        return value

    @field_validator('cadence')
    @classmethod
    def check_cadence(cls, value):
        value = value.strip()
        if value not in ('final', 'every') and not (value.isdigit() and int(value) >= 1):
            raise ValueError(f"cadence must be final, every or a positive step count, got {value!r}")
        return value

    @model_validator(mode='after')
    def check_windows(self):
        train = _steps_in(self.train_s, self.dt, 'train_s')
        if self.eval_s is not None and _steps_in(self.eval_s, self.dt, 'eval_s') < train:
            raise ValueError(f"eval_s={self.eval_s} s is shorter than train_s={self.train_s} s")
        if train < self.sample_every:
            raise ValueError(f"sample_every={self.sample_every} exceeds the {train}-step training window")
        return self

    @property
    def train_steps(self) -> int:
        return _steps_in(self.train_s, self.dt, 'train_s')

    @property
    def eval_steps(self) -> int:
        return self.train_steps if self.eval_s is None else _steps_in(self.eval_s, self.dt, 'eval_s')

    @property
    def cadence_every(self) -> Optional[int]:
        """Record interval in steps; None for the final step only"""
        if self.cadence == 'final':
            return None
        return 1 if self.cadence == 'every' else int(self.cadence)

    def region_list(self) -> List[Region]:
        return [Region.parse(text) for text in self.regions]

    def grid_spec(self) -> GridSpec:
        return GridSpec(
            nx=self.nx, ny=self.ny, nz_heat=self.nz_heat, nz_sub=self.nz_sub,
            len_x=self.len_x_mm * 1e-3, len_y=self.len_y_mm * 1e-3,
            t_heat=self.t_heat_um * 1e-6, t_sub=self.t_sub_um * 1e-6,
        )

    def boundary(self) -> BoundarySpec:
        return BoundarySpec(h=self.h, t_amb=self.t_amb)

    def materials(self, grid: Grid) -> MaterialField:
        return layered_materials(grid, self.k_heat, self.rhoc_heat, self.k_sub, self.rhoc_sub)

    def synth_spec(self, units: Sequence[str], steps: int, seed: int) -> TraceSynthSpec:
        """
        Seeded waveforms, one per unit, cycling through synth_waveforms.

        Periods depend on the unit position only: units sharing a waveform kind
        get multipliers 1, 2, 3 in turn, so no two of them switch in lockstep.
        The seed draws the amplitude scale (0.5-1.0) and the phase, so a
        different seed gives a held-out trace from the same family.
        """
        rng = np.random.default_rng(seed)
        n_kinds = len(self.synth_waveforms)
        waveforms = {}
        for u, name in enumerate(units):
            period = self.synth_period_steps * (1 + (u // n_kinds) % 3)
            waveforms[name] = WaveformSpec(
                kind=self.synth_waveforms[u % n_kinds],
                amplitude=self.synth_amplitude_w * rng.uniform(0.5, 1.0),
                base=self.synth_base_w,
                period=period,
                phase=int(rng.integers(0, period)),
                seed=int(rng.integers(0, 2**31 - 1)),
            )
        return TraceSynthSpec(units=tuple(units), steps=steps, dt=self.dt, waveforms=waveforms)

    def resolved_threads(self, cli_threads: Optional[int] = None) -> int:
        if cli_threads is not None:
            return cli_threads
        return self.threads if self.threads is not None else settings.runtime.threads

    def resolved_out_dir(self, cli_out_dir: Optional[Union[str, Path]] = None) -> Path:
        if cli_out_dir is not None:
            return Path(cli_out_dir)
        return self.out_dir if self.out_dir is not None else Path(settings.runtime.out_dir)

    def config_hash(self) -> str:
        """Hash of the validated values; threads and out_dir do not change results"""
        values = self.model_dump(mode='json', exclude={'threads', 'out_dir'})
        payload = json.dumps(values, sort_keys=True)
        return hashlib.md5(payload.encode()).hexdigest()


def parse_assignments(lines: Sequence[str], source: str) -> Dict[str, str]:
    """`key = value` lines; blank lines and `#` comments are skipped"""
    values = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{number}: expected key = value, got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        values[key] = value
    return values


def _resolve_paths(values: Dict[str, str], base: Path) -> Dict[str, str]:
    for key in PATH_KEYS:
        if values.get(key):
            path = Path(values[key]).expanduser()
            values[key] = str(path if path.is_absolute() else base / path)
    return values


def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> RunConfig:
    """
    Read, override and validate a run config.

    Paths in the file resolve against its directory, paths in overrides
    against the working directory.
    """
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        values = parse_assignments(f.read().splitlines(), str(path))
    values = _resolve_paths(values, path.resolve().parent)

    extra = {}
    for item in overrides:
        extra.update(parse_assignments([item], '--override'))
    values.update(_resolve_paths(extra, Path.cwd()))

    config = RunConfig(**{key: value for key, value in values.items() if value != ''})
    logger.info(f"Loaded config {path} (hash {config.config_hash()[:12]})")
    return config

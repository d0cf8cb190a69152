"""
Least-squares error of ROM fields against FOM fields.

err_num = sqrt( sum_i int e_i^2 dV / sum_i int (T_i - T_amb)^2 dV )
over all time steps i, integrated with cell volumes over a region.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from rom_service.errors import GeometryError, ZeroReferenceError
from rom_service.geometry.grid import Grid, Region

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorReport:
    """Aggregated and per-step LS error; num/den are the per-step integrals"""

    err_num: float
    num: np.ndarray = field(repr=False)
    den: np.ndarray = field(repr=False)
    region: str = 'chip'
    M: Optional[int] = None

    @property
    def n_steps(self) -> int:
        return self.num.size

    @property
    def per_step_err(self) -> np.ndarray:
        """sqrt(num_i / den_i); NaN where the reference is ambient"""
        out = np.full(self.num.shape, np.nan)
        np.divide(self.num, self.den, out=out, where=self.den > 0)
        return np.sqrt(out)

    @classmethod
    def from_integrals(cls, num: np.ndarray, den: np.ndarray, region: str = 'chip',
                       M: Optional[int] = None) -> 'ErrorReport':
        total = float(den.sum())
        if total == 0.0:
            raise ZeroReferenceError(
                f"Reference fields on region {region} never leave ambient; relative error undefined"
            )
        return cls(err_num=float(np.sqrt(num.sum() / total)), num=num, den=den, region=region, M=M)

    def head(self, steps: int) -> 'ErrorReport':
        """Report over the first `steps` steps only"""
        return ErrorReport.from_integrals(self.num[:steps], self.den[:steps], region=self.region, M=self.M)

    @classmethod
    def merge(cls, reports: Sequence['ErrorReport']) -> 'ErrorReport':
        """Combine reports over consecutive step chunks"""
        first = reports[0]
        return cls.from_integrals(
            np.concatenate([r.num for r in reports]),
            np.concatenate([r.den for r in reports]),
            region=first.region,
            M=first.M,
        )


def _restrict(fields: np.ndarray, grid: Grid, region: Region, name: str) -> np.ndarray:
    fields = np.asarray(fields, dtype=np.float64)
    if fields.ndim == 1:
        fields = fields[:, None]
    if fields.shape[0] == grid.n_cells:
        return fields[region.indices(grid)]
    if fields.shape[0] == region.size(grid):
        return fields
    raise GeometryError(
        f"{name} has {fields.shape[0]} rows; expected {grid.n_cells} (chip) or {region.size(grid)} ({region.label})"
    )


def ls_integrals(fom_fields: np.ndarray, rom_fields: np.ndarray, grid: Grid,
                 region: Region = Region(), t_amb: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Per-step squared-error and reference-rise integrals over the region"""
    ref = _restrict(fom_fields, grid, region, 'FOM fields')
    rom = _restrict(rom_fields, grid, region, 'ROM fields')
    if ref.shape != rom.shape:
        raise GeometryError(f"FOM fields {ref.shape} and ROM fields {rom.shape} differ in shape")

    weights = grid.volumes[region.indices(grid)]
    return weights @ (ref - rom) ** 2, weights @ (ref - t_amb) ** 2


def ls_error(fom_fields: np.ndarray, rom_fields: np.ndarray, grid: Grid,
             region: Region = Region(), M: Optional[int] = None, t_amb: float = 0.0) -> ErrorReport:
    """
    Numerical LS error of rom_fields against fom_fields (cells x steps).

    Fields are temperatures referenced to t_amb (pass t_amb=0 for rises). Both
    may be whole-chip fields or already restricted to the region.
    """
    num, den = ls_integrals(fom_fields, rom_fields, grid, region, t_amb)
    report = ErrorReport.from_integrals(num, den, region=region.label, M=M)
    logger.debug(f"LS error on {region.label} over {report.n_steps} steps: {report.err_num:.4e}")
    return report

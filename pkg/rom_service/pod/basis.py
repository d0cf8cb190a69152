"""
POD modes from snapshots by the method of snapshots.

The correlation matrix uses the volume-weighted inner product, so modes are
orthonormal in that inner product. Snapshots are temperature rises and are
correlated without mean subtraction.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg as la

from rom_service.errors import GeometryError, PodError
from rom_service.fom.solver import SnapshotSet
from rom_service.geometry.grid import Grid, weighted_gram
from rom_service.storage.podt import KIND_BASIS, PodtReader, PodtWriter, atomic_write

logger = logging.getLogger(__name__)

# Relative eigenvalue floor: below this the spectrum is rounding noise
EIGEN_FLOOR = 1e-14
# Negative eigenvalues within this fraction of lambda_1 are clamped to zero
NEGATIVE_TOL = 1e-10
ORTHONORMAL_TOL = 1e-10


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues in descending order and the count above the floor"""

    lambdas: np.ndarray
    retained: int

    @property
    def total(self) -> float:
        return float(self.lambdas.sum())

    def to_frame(self) -> pd.DataFrame:
        """mode_index, lambda, cumulative_err_theo for the retained modes"""
        modes = np.arange(1, self.retained + 1)
        return pd.DataFrame({
            'mode_index': modes,
            'lambda': self.lambdas[:self.retained],
            'cumulative_err_theo': [theoretical_error(self, m) for m in modes],
        })


def correlation_matrix(snaps: SnapshotSet) -> np.ndarray:
    """R_ij = (1/Ns) <theta_i, theta_j>"""
    n_snaps = snaps.n_snapshots
    if n_snaps < 1:
        raise PodError("Correlation needs at least one snapshot")
    R = weighted_gram(snaps.S, snaps.S, snaps.grid) / n_snaps
    return 0.5 * (R + R.T)


def eigendecompose(R: np.ndarray) -> Tuple[Spectrum, np.ndarray]:
    """Symmetric eigendecomposition with pairs sorted by descending eigenvalue"""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise PodError(f"Correlation matrix must be square, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise PodError("Correlation matrix contains non-finite entries")

    try:
        lambdas, V = la.eigh(R)
    except la.LinAlgError as e:
        raise PodError(f"Eigendecomposition failed: {e}") from e

    order = np.argsort(-lambdas, kind='stable')
    lambdas = lambdas[order]
    V = V[:, order]

    top = max(lambdas[0], 0.0)
    if np.any(lambdas < -NEGATIVE_TOL * top):
        logger.warning(f"Correlation matrix has eigenvalue {lambdas.min():.3e} below tolerance")
    lambdas = np.clip(lambdas, 0.0, None)

    retained = int(np.count_nonzero(lambdas > EIGEN_FLOOR * top)) if top > 0 else 0
    logger.info(f"Spectrum: {lambdas.size} eigenvalues, {retained} above the {EIGEN_FLOOR:.0e} floor")
    return Spectrum(lambdas=lambdas, retained=retained), V


def theoretical_error(spectrum: Spectrum, M: int) -> float:
    """sqrt(sum of lambda_i for i > M / sum of all lambda_i)"""
    if not 0 <= M <= spectrum.lambdas.size:
        raise PodError(f"Mode count {M} outside 0..{spectrum.lambdas.size}")
    total = spectrum.total
    if total == 0.0:
        return 0.0
    # sum smallest first
    tail = float(np.sum(spectrum.lambdas[M:][::-1]))
    return float(np.sqrt(max(tail, 0.0) / total))


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    # entry of largest magnitude (first on ties) is made nonnegative
    peaks = np.argmax(np.abs(phi), axis=0)
    signs = np.where(phi[peaks, np.arange(phi.shape[1])] < 0, -1.0, 1.0)
    return phi * signs


def _orthonormalize(phi: np.ndarray, grid: Grid) -> np.ndarray:
    """Weighted QR; column k stays in the span of the first k input columns"""
    root = np.sqrt(grid.volumes)[:, None]
    Q, Rq = np.linalg.qr(root * phi)
    Q = Q * np.where(np.diag(Rq) < 0, -1.0, 1.0)
    return Q / root


@dataclass(frozen=True)
class PodBasis:
    """Volume-orthonormal modes (n_cells x M) plus the spectrum they came from"""

    phi: np.ndarray = field(repr=False)
    grid: Grid = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.phi.shape[1]

    @property
    def n_cells(self) -> int:
        return self.phi.shape[0]

    @classmethod
    def from_matrix(cls, phi: np.ndarray, grid: Grid,
                    eigenvalues: Optional[np.ndarray] = None) -> 'PodBasis':
        """Wrap an arbitrary basis after checking volume orthonormality"""
        phi = np.asfortranarray(grid.check_field(phi, 'basis'))
        gram = weighted_gram(phi, phi, grid)
        deviation = np.max(np.abs(gram - np.eye(phi.shape[1]))) if phi.size else 0.0
        if deviation > ORTHONORMAL_TOL:
            raise PodError(f"Basis is not volume-orthonormal (max deviation {deviation:.2e})")
        lambdas = np.zeros(0) if eigenvalues is None else np.asarray(eigenvalues, dtype=np.float64)
        return cls(phi=phi, grid=grid, eigenvalues=lambdas)

    def truncate(self, M: int) -> 'PodBasis':
        if not 1 <= M <= self.M:
            raise PodError(f"Cannot truncate a {self.M}-mode basis to {M} modes")
        return PodBasis(phi=np.asfortranarray(self.phi[:, :M]), grid=self.grid, eigenvalues=self.eigenvalues)

    def project(self, fields: np.ndarray) -> np.ndarray:
        """Modal coefficients <phi_i, field> of one field or a column stack"""
        fields = np.asarray(fields, dtype=np.float64)
        single = fields.ndim == 1
        coeffs = weighted_gram(self.phi, fields.reshape(self.n_cells, -1), self.grid)
        return coeffs[:, 0] if single else coeffs

    def spectrum(self) -> Spectrum:
        top = self.eigenvalues[0] if self.eigenvalues.size else 0.0
        retained = int(np.count_nonzero(self.eigenvalues > EIGEN_FLOOR * top)) if top > 0 else 0
        return Spectrum(lambdas=self.eigenvalues, retained=retained)

    def save(self, path: Union[str, Path]):
        save_basis(self, path)

    @classmethod
    def load(cls, path: Union[str, Path], grid: Grid) -> 'PodBasis':
        return load_basis(path, grid)


def build_modes(snaps: SnapshotSet, spectrum: Spectrum, V: np.ndarray, M: int) -> PodBasis:
    """phi_k = sum_i V_ik theta_i / sqrt(Ns * lambda_k) for the first M pairs"""
    if M < 1 or M > spectrum.retained:
        raise PodError(f"Requested {M} modes, only {spectrum.retained} retained")

    n_snaps = snaps.n_snapshots
    scale = 1.0 / np.sqrt(n_snaps * spectrum.lambdas[:M])
    phi = (snaps.S @ V[:, :M]) * scale

    # rounding in S V grows like 1/sqrt(lambda_k); restore exact orthonormality
    phi = _orthonormalize(phi, snaps.grid)
    phi = np.asfortranarray(_fix_signs(phi))
    return PodBasis(phi=phi, grid=snaps.grid, eigenvalues=spectrum.lambdas.copy())


def train_pod(snaps: SnapshotSet, M: Optional[int] = None) -> Tuple[PodBasis, Spectrum]:
    """Correlate, decompose and build M modes (all retained modes by default)"""
    spectrum, V = eigendecompose(correlation_matrix(snaps))
    if M is None:
        M = spectrum.retained
    elif M > spectrum.retained:
        logger.warning(f"Requested {M} modes, capping at {spectrum.retained} retained")
        M = spectrum.retained
    return build_modes(snaps, spectrum, V, M), spectrum


def save_basis(basis: PodBasis, path: Union[str, Path]):
    """Basis container: N_cells, M, eigenvalue count, eigenvalues, then Phi column-major"""
    with atomic_write(path) as f:
        writer = PodtWriter(f, KIND_BASIS, basis.grid.grid_hash)
        writer.counts(basis.n_cells, basis.M, basis.eigenvalues.size)
        writer.floats(basis.eigenvalues)
        writer.floats(basis.phi)
    logger.info(f"Saved {basis.M}-mode basis to {path}")


def load_basis(path: Union[str, Path], grid: Grid) -> PodBasis:
    reader = PodtReader(path, KIND_BASIS)
    n_cells, M, n_eigs = reader.counts(3)
    if n_cells != grid.n_cells:
        raise GeometryError(f"Basis {path} has {n_cells} cells, grid has {grid.n_cells}")
    if reader.grid_hash != grid.grid_hash:
        raise GeometryError(
            f"Basis {path} was trained on grid {reader.grid_hash:016x}, config grid is {grid.grid_hash:016x}"
        )
    eigenvalues = reader.floats(n_eigs)
    phi = np.asfortranarray(reader.floats((n_cells, M)))
    reader.finish()
    logger.info(f"Loaded {M}-mode basis from {path}")
    return PodBasis(phi=phi, grid=grid, eigenvalues=eigenvalues)

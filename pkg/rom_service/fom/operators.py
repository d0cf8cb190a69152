"""
Cell-centered finite-volume operators for transient heat conduction.

The stiffness matrix couples every cell to its six face neighbors with the
series conductance of the two half cells, and adds h * (face area) on the
diagonal of bottom-layer cells (convection lumped at the cell center).
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from rom_service.errors import GeometryError
from rom_service.geometry.grid import BoundarySpec, Grid, MaterialField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FomOperators:
    """Diagonal capacitance (J/K) and sparse SPD stiffness (W/K)"""

    grid: Grid = field(repr=False)
    mdiag: np.ndarray = field(repr=False)
    A: sparse.csr_matrix = field(repr=False)
    h: float
    bottom_conductance: float

    @property
    def n_cells(self) -> int:
        return self.mdiag.size


def _face_conductance(area, half_p, k_p, half_q, k_q):
    # series resistance of the two half cells
    return area / (half_p / k_p + half_q / k_q)


def assemble_operators(grid: Grid, materials: MaterialField, bc: BoundarySpec) -> FomOperators:
    """Assemble Mdiag = rhoC * V and the 7-point stiffness matrix A"""
    n = grid.n_cells
    if materials.k.shape != (n,) or materials.rho_c.shape != (n,):
        raise GeometryError(
            f"Material fields have {materials.k.size} / {materials.rho_c.size} entries, grid has {n} cells"
        )

    k = grid.as_volume(materials.k)
    idx = np.arange(n).reshape(grid.nz, grid.ny, grid.nx)
    dz = grid.dz[:, None, None]

    pairs_p, pairs_q, conductances = [], [], []

    # x faces
    area = np.broadcast_to(grid.dy * dz, idx[:, :, 1:].shape)
    g = _face_conductance(area, grid.dx / 2, k[:, :, :-1], grid.dx / 2, k[:, :, 1:])
    pairs_p.append(idx[:, :, :-1].ravel())
    pairs_q.append(idx[:, :, 1:].ravel())
    conductances.append(g.ravel())

    # y faces
    area = np.broadcast_to(grid.dx * dz, idx[:, 1:, :].shape)
    g = _face_conductance(area, grid.dy / 2, k[:, :-1, :], grid.dy / 2, k[:, 1:, :])
    pairs_p.append(idx[:, :-1, :].ravel())
    pairs_q.append(idx[:, 1:, :].ravel())
    conductances.append(g.ravel())

    # z faces, layers may differ in thickness
    g = _face_conductance(grid.face_area_z, dz[:-1] / 2, k[:-1], dz[1:] / 2, k[1:])
    pairs_p.append(idx[:-1].ravel())
    pairs_q.append(idx[1:].ravel())
    conductances.append(g.ravel())

    p = np.concatenate(pairs_p)
    q = np.concatenate(pairs_q)
    g = np.concatenate(conductances)

    diagonal = np.bincount(p, weights=g, minlength=n) + np.bincount(q, weights=g, minlength=n)
    bottom_conductance = bc.h * grid.face_area_z
    diagonal[grid.bottom_cells()] += bottom_conductance

    rows = np.concatenate([p, q, np.arange(n)])
    cols = np.concatenate([q, p, np.arange(n)])
    vals = np.concatenate([-g, -g, diagonal])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sort_indices()

    mdiag = materials.rho_c * grid.volumes
    mdiag.setflags(write=False)

    logger.debug(f"Assembled {n}-cell operators with {A.nnz} nonzeros, h={bc.h}")
    return FomOperators(grid=grid, mdiag=mdiag, A=A, h=bc.h, bottom_conductance=bottom_conductance)

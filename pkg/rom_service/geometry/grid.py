"""
Structured chip discretization: heating layer on top of a substrate.

Cells are numbered layer by layer from the top surface down, row-major inside a
layer: index = (k * ny + j) * nx + i. The first nz_heat layers form the heating
layer, so heating-layer cells occupy one contiguous block at the start of every
cell field.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from rom_service.errors import GeometryError

logger = logging.getLogger(__name__)

# Reference chip: 31.0 mm x 21.5 mm, 55.8 um heating layer, 241.8 um substrate
DEFAULT_LEN_X = 31.0e-3
DEFAULT_LEN_Y = 21.5e-3
DEFAULT_T_HEAT = 55.8e-6
DEFAULT_T_SUB = 241.8e-6

# Silicon-like defaults
DEFAULT_K = 149.0
DEFAULT_RHO_C = 1.66e6


class GridSpec(BaseModel):
    """Cell counts and chip extents (SI units)"""

    model_config = ConfigDict(frozen=True)

    nx: int = Field(..., ge=1, description="Cells along x")
    ny: int = Field(..., ge=1, description="Cells along y")
    nz_heat: int = Field(..., ge=1, description="Cell layers in the heating layer")
    nz_sub: int = Field(..., ge=1, description="Cell layers in the substrate")
    len_x: float = Field(DEFAULT_LEN_X, gt=0, description="Chip extent along x (m)")
    len_y: float = Field(DEFAULT_LEN_Y, gt=0, description="Chip extent along y (m)")
    t_heat: float = Field(DEFAULT_T_HEAT, gt=0, description="Heating layer thickness (m)")
    t_sub: float = Field(DEFAULT_T_SUB, gt=0, description="Substrate thickness (m)")

    @property
    def nz(self) -> int:
        return self.nz_heat + self.nz_sub


@dataclass(frozen=True)
class Grid:
    """Uniform-per-layer box grid built from a GridSpec"""

    spec: GridSpec
    dx: float
    dy: float
    dz: np.ndarray = field(repr=False)
    volumes: np.ndarray = field(repr=False)
    grid_hash: int

    @property
    def nx(self) -> int:
        return self.spec.nx

    @property
    def ny(self) -> int:
        return self.spec.ny

    @property
    def nz(self) -> int:
        return self.spec.nz

    @property
    def nz_heat(self) -> int:
        return self.spec.nz_heat

    @property
    def n_columns(self) -> int:
        return self.spec.nx * self.spec.ny

    @property
    def n_cells(self) -> int:
        return self.n_columns * self.nz

    @property
    def n_heat_cells(self) -> int:
        return self.n_columns * self.nz_heat

    @property
    def face_area_z(self) -> float:
        """Area of a horizontal cell face (m^2)"""
        return self.dx * self.dy

    @property
    def chip_area(self) -> float:
        return self.spec.len_x * self.spec.len_y

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    @property
    def z_centers(self) -> np.ndarray:
        """Depth of each layer center below the top surface (m)"""
        return np.cumsum(self.dz) - 0.5 * self.dz

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 3) array of x, y, depth per cell, in index order"""
        z, y, x = np.meshgrid(self.z_centers, self.y_centers, self.x_centers, indexing='ij')
        return np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    def index(self, i: int, j: int, k: int) -> int:
        """Linear cell index of (i, j, k)"""
        if not (0 <= i < self.nx and 0 <= j < self.ny and 0 <= k < self.nz):
            raise GeometryError(f"Cell ({i}, {j}, {k}) outside {self.nx}x{self.ny}x{self.nz} grid")
        return (k * self.ny + j) * self.nx + i

    def unravel(self, index: int) -> Tuple[int, int, int]:
        """Inverse of index()"""
        if not 0 <= index < self.n_cells:
            raise GeometryError(f"Cell index {index} outside grid of {self.n_cells} cells")
        k, rest = divmod(int(index), self.n_columns)
        j, i = divmod(rest, self.nx)
        return i, j, k

    def layer_cells(self, k: int) -> slice:
        """Cell-index block of layer k"""
        if not 0 <= k < self.nz:
            raise GeometryError(f"Layer {k} outside 0..{self.nz - 1}")
        return slice(k * self.n_columns, (k + 1) * self.n_columns)

    def heating_cells(self) -> slice:
        return slice(0, self.n_heat_cells)

    def bottom_cells(self) -> slice:
        return self.layer_cells(self.nz - 1)

    def as_volume(self, values: np.ndarray) -> np.ndarray:
        """View a cell field as a (nz, ny, nx) array"""
        return np.asarray(values).reshape(self.nz, self.ny, self.nx)

    def check_field(self, values: np.ndarray, name: str = 'field') -> np.ndarray:
        """Validate that a cell field (or a stack of column fields) fits this grid"""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != self.n_cells:
            raise GeometryError(
                f"{name} has {values.shape[0]} entries, grid has {self.n_cells} cells"
            )
        return values


def _spec_hash(spec: GridSpec) -> int:
    """64-bit digest of the grid spec, stored in every artifact"""
    payload = json.dumps(spec.model_dump(), sort_keys=True)
    digest = hashlib.sha256(payload.encode()).digest()
    return int.from_bytes(digest[:8], 'little')


def build_grid(spec: Union[GridSpec, dict]) -> Grid:
    """
    Build the grid for a spec.

    dx and dy are uniform; dz is t_heat/nz_heat in heating layers and
    t_sub/nz_sub in substrate layers.
    """
    if not isinstance(spec, GridSpec):
        spec = GridSpec(**spec)

    dx = spec.len_x / spec.nx
    dy = spec.len_y / spec.ny
    dz = np.concatenate([
        np.full(spec.nz_heat, spec.t_heat / spec.nz_heat),
        np.full(spec.nz_sub, spec.t_sub / spec.nz_sub),
    ])

    # Per-cell volume, constant within a layer
    volumes = np.repeat(dx * dy * dz, spec.nx * spec.ny)
    dz.setflags(write=False)
    volumes.setflags(write=False)

    grid = Grid(spec=spec, dx=dx, dy=dy, dz=dz, volumes=volumes, grid_hash=_spec_hash(spec))
    logger.debug(f"Grid {spec.nx}x{spec.ny}x{spec.nz}: dx={dx:.4e} m, dy={dy:.4e} m")
    return grid


def inner_product(u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    """Volume-weighted inner product: sum over cells of u_c * v_c * V_c"""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != (grid.n_cells,) or v.shape != (grid.n_cells,):
        raise GeometryError(
            f"Field shapes {u.shape} and {v.shape} do not match grid of {grid.n_cells} cells"
        )
    return float(np.dot(u * v, grid.volumes))


def weighted_gram(a: np.ndarray, b: np.ndarray, grid: Grid) -> np.ndarray:
    """Matrix of inner products between the columns of a and b"""
    a = grid.check_field(a, 'left operand')
    b = grid.check_field(b, 'right operand')
    return a.T @ (grid.volumes[:, None] * b)


@dataclass(frozen=True)
class MaterialField:
    """Per-cell conductivity k (W/(m K)) and volumetric heat capacity rhoC (J/(m^3 K))"""

    k: np.ndarray = field(repr=False)
    rho_c: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name, values in (('k', self.k), ('rho_c', self.rho_c)):
            values = np.asarray(values, dtype=np.float64)
            if values.ndim != 1 or not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise GeometryError(f"Material {name} must be finite and strictly positive")
            object.__setattr__(self, name, values)


def layered_materials(
    grid: Grid,
    k_heat: float = DEFAULT_K,
    rho_c_heat: float = DEFAULT_RHO_C,
    k_sub: float = DEFAULT_K,
    rho_c_sub: float = DEFAULT_RHO_C,
) -> MaterialField:
    """Homogeneous heating layer over a homogeneous substrate"""
    heat = grid.n_heat_cells
    k = np.full(grid.n_cells, float(k_sub))
    rho_c = np.full(grid.n_cells, float(rho_c_sub))
    k[:heat] = k_heat
    rho_c[:heat] = rho_c_heat
    return MaterialField(k=k, rho_c=rho_c)


class BoundarySpec(BaseModel):
    """Convective substrate bottom; every other face adiabatic"""

    model_config = ConfigDict(frozen=True)

    h: float = Field(2.0e4, ge=0, description="Heat transfer coefficient (W/(m^2 K))")
    t_amb: float = Field(318.15, description="Ambient temperature (K)")


_REGION_CODES = {'chip': 0, 'heating': 1, 'layer': 2, 'cells': 3}


@dataclass(frozen=True)
class Region:
    """Part of the chip a field is reconstructed or evaluated on"""

    kind: Literal['chip', 'heating', 'layer', 'cells'] = 'chip'
    layer: int = 0
    cells: Tuple[int, ...] = ()

    @classmethod
    def parse(cls, text: str) -> 'Region':
        """chip | heating | layer:<k>"""
        name, _, arg = text.strip().partition(':')
        if name in ('chip', 'heating') and not arg:
            return cls(kind=name)
        if name == 'layer' and arg.isdigit():
            return cls(kind='layer', layer=int(arg))
        raise GeometryError(f"Unknown region {text!r}")

    @property
    def label(self) -> str:
        if self.kind == 'layer':
            return f'layer{self.layer}'
        return self.kind

    def indices(self, grid: Grid) -> Union[slice, np.ndarray]:
        if self.kind == 'chip':
            return slice(0, grid.n_cells)
        if self.kind == 'heating':
            return grid.heating_cells()
        if self.kind == 'layer':
            return grid.layer_cells(self.layer)
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.size == 0 or cells.min() < 0 or cells.max() >= grid.n_cells:
            raise GeometryError(f"Region cells outside grid of {grid.n_cells} cells")
        return cells

    def size(self, grid: Grid) -> int:
        idx = self.indices(grid)
        return idx.stop - idx.start if isinstance(idx, slice) else idx.size

    def descriptor(self) -> List[int]:
        param = self.layer if self.kind == 'layer' else len(self.cells)
        return [_REGION_CODES[self.kind], param, *self.cells]

    @classmethod
    def from_descriptor(cls, descriptor) -> 'Region':
        codes = {code: name for name, code in _REGION_CODES.items()}
        kind = codes.get(descriptor[0])
        if kind is None:
            raise GeometryError(f"Unknown region code {descriptor[0]}")
        return cls(kind=kind, layer=descriptor[1] if kind == 'layer' else 0,
                   cells=tuple(descriptor[2:]))

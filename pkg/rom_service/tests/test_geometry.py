import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))
from rom_service.errors import GeometryError
from rom_service.geometry.floorplan import Floorplan, FunctionalUnit, load_floorplan, unit_cell_overlap
from rom_service.geometry.grid import (
    GridSpec,
    MaterialField,
    Region,
    build_grid,
    inner_product,
    layered_materials,
    weighted_gram,
)

DEMO = os.path.join(os.path.dirname(__file__), '..', 'demo')


@pytest.fixture
def tiny_grid():
    return build_grid(dict(nx=2, ny=2, nz_heat=1, nz_sub=1,
                           len_x=2e-3, len_y=2e-3, t_heat=1e-4, t_sub=1e-4))


@pytest.fixture
def reference_chip():
    return build_grid(dict(nx=8, ny=6, nz_heat=2, nz_sub=3))


def write_floorplan(tmp_path, rows, name='fp.csv'):
    path = tmp_path / name
    path.write_text("name,x0_mm,y0_mm,width_mm,height_mm\n" + "\n".join(rows) + "\n")
    return path


class TestBuildGrid:
    def test_tiny_grid_cells_and_volumes(self, tiny_grid):
        assert tiny_grid.n_cells == 8
        np.testing.assert_allclose(tiny_grid.volumes, 1e-10, rtol=1e-12)

    def test_full_scale_spacing(self):
        grid = build_grid(dict(nx=256, ny=256, nz_heat=4, nz_sub=10))
        assert grid.nz == 14
        assert grid.dx == pytest.approx(1.2109e-4, rel=1e-4)
        assert grid.dy == pytest.approx(8.3984e-5, rel=1e-4)

    def test_zero_count_rejected(self):
        with pytest.raises(ValidationError):
            build_grid(dict(nx=0, ny=2, nz_heat=1, nz_sub=1))

    def test_negative_length_rejected(self):
        with pytest.raises(ValidationError):
            GridSpec(nx=1, ny=1, nz_heat=1, nz_sub=1, len_x=-1.0)

    def test_volumes_sum_to_chip_volume(self, reference_chip):
        spec = reference_chip.spec
        expected = spec.len_x * spec.len_y * (spec.t_heat + spec.t_sub)
        assert reference_chip.volumes.sum() == pytest.approx(expected, rel=1e-12)

    def test_heating_layer_comes_first(self, reference_chip):
        heat = reference_chip.heating_cells()
        assert heat.start == 0
        assert heat.stop == reference_chip.nx * reference_chip.ny * 2
        assert np.all(reference_chip.dz[:2] == reference_chip.spec.t_heat / 2)

    def test_hash_depends_on_spec(self, reference_chip):
        same = build_grid(reference_chip.spec)
        other = build_grid(reference_chip.spec.model_copy(update={'nx': 9}))
        assert same.grid_hash == reference_chip.grid_hash
        assert other.grid_hash != reference_chip.grid_hash

    def test_cell_centers_follow_index_order(self, reference_chip):
        centers = reference_chip.cell_centers()
        i, j, k = 3, 4, 2
        c = reference_chip.index(i, j, k)
        np.testing.assert_allclose(centers[c], [reference_chip.x_centers[i], reference_chip.y_centers[j],
                                                reference_chip.z_centers[k]])


class TestIndexing:
    def test_index_is_bijective(self, reference_chip):
        seen = set()
        for k in range(reference_chip.nz):
            for j in range(reference_chip.ny):
                for i in range(reference_chip.nx):
                    c = reference_chip.index(i, j, k)
                    assert reference_chip.unravel(c) == (i, j, k)
                    seen.add(c)
        assert seen == set(range(reference_chip.n_cells))

    def test_out_of_range_cell(self, tiny_grid):
        with pytest.raises(GeometryError):
            tiny_grid.index(2, 0, 0)


class TestInnerProduct:
    def test_ones_give_chip_volume(self):
        grid = build_grid(dict(nx=4, ny=4, nz_heat=1, nz_sub=2))
        ones = np.ones(grid.n_cells)
        assert inner_product(ones, ones, grid) == pytest.approx(1.9835e-7, rel=1e-4)

    def test_zero_field(self, tiny_grid):
        assert inner_product(np.ones(8), np.zeros(8), tiny_grid) == 0.0

    def test_single_cell_indicator(self, reference_chip):
        e = np.zeros(reference_chip.n_cells)
        e[-1] = 1.0
        assert inner_product(e, e, reference_chip) == reference_chip.volumes[-1]

    def test_size_mismatch(self, tiny_grid):
        with pytest.raises(GeometryError):
            inner_product(np.ones(7), np.ones(8), tiny_grid)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_symmetric_and_bilinear(self, seed, alpha, beta):
        grid = build_grid(dict(nx=3, ny=2, nz_heat=1, nz_sub=2))
        rng = np.random.default_rng(seed)
        u, v, w = rng.normal(size=(3, grid.n_cells))
        assert inner_product(u, v, grid) == pytest.approx(inner_product(v, u, grid), rel=1e-12, abs=1e-24)
        lhs = inner_product(alpha * u + beta * w, v, grid)
        rhs = alpha * inner_product(u, v, grid) + beta * inner_product(w, v, grid)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-20)

    def test_gram_matches_pairwise_products(self, tiny_grid):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(8, 3))
        gram = weighted_gram(a, a, tiny_grid)
        for p in range(3):
            for q in range(3):
                assert gram[p, q] == pytest.approx(inner_product(a[:, p], a[:, q], tiny_grid), rel=1e-12)


class TestMaterials:
    def test_layered_values(self, tiny_grid):
        mats = layered_materials(tiny_grid, k_heat=100.0, rho_c_heat=1e6, k_sub=150.0, rho_c_sub=2e6)
        assert np.all(mats.k[:4] == 100.0)
        assert np.all(mats.k[4:] == 150.0)
        assert np.all(mats.rho_c[4:] == 2e6)

    def test_nonpositive_rejected(self):
        with pytest.raises(GeometryError):
            MaterialField(k=np.array([1.0, 0.0]), rho_c=np.array([1.0, 1.0]))


class TestRegion:
    def test_parse(self):
        assert Region.parse('chip') == Region('chip')
        assert Region.parse('heating').label == 'heating'
        assert Region.parse('layer:3') == Region('layer', layer=3)
        with pytest.raises(GeometryError):
            Region.parse('bottom')

    def test_sizes(self, reference_chip):
        assert Region('chip').size(reference_chip) == reference_chip.n_cells
        assert Region('heating').size(reference_chip) == reference_chip.n_heat_cells
        assert Region('layer', layer=4).size(reference_chip) == reference_chip.n_columns

    def test_descriptor_round_trip(self):
        region = Region('cells', cells=(1, 5, 9))
        assert Region.from_descriptor(region.descriptor()) == region

    def test_cells_out_of_grid(self, tiny_grid):
        with pytest.raises(GeometryError):
            Region('cells', cells=(8,)).indices(tiny_grid)


class TestLoadFloorplan:
    def test_single_unit(self, tmp_path, tiny_grid):
        fp = load_floorplan(write_floorplan(tmp_path, ["core0,0,0,1.0,1.0"]), tiny_grid.spec)
        unit = fp.units[0]
        assert unit.name == 'core0'
        assert (unit.x0, unit.y0) == (0.0, 0.0)
        assert unit.w == pytest.approx(1e-3)
        assert unit.hgt == pytest.approx(1e-3)

    def test_unit_past_chip_edge(self, tmp_path, tiny_grid):
        with pytest.raises(GeometryError):
            load_floorplan(write_floorplan(tmp_path, ["core0,1.5,0,1.0,1.0"]), tiny_grid.spec)

    def test_duplicate_names(self, tmp_path, tiny_grid):
        with pytest.raises(GeometryError):
            load_floorplan(write_floorplan(tmp_path, ["a,0,0,1,1", "a,1,1,1,1"]), tiny_grid.spec)

    def test_malformed_row(self, tmp_path, tiny_grid):
        with pytest.raises(GeometryError):
            load_floorplan(write_floorplan(tmp_path, ["a,0,0,one,1"]), tiny_grid.spec)

    def test_wrong_header(self, tmp_path, tiny_grid):
        path = tmp_path / 'fp.csv'
        path.write_text("unit,x,y,w,h\na,0,0,1,1\n")
        with pytest.raises(GeometryError):
            load_floorplan(path, tiny_grid.spec)

    def test_missing_file(self, tmp_path, tiny_grid):
        with pytest.raises(FileNotFoundError):
            load_floorplan(tmp_path / 'absent.csv', tiny_grid.spec)

    def test_shipped_18_core_floorplan(self, reference_chip):
        fp = load_floorplan(os.path.join(DEMO, 'xeon18_floorplan.csv'), reference_chip.spec)
        cores = [name for name in fp.unit_names if name.startswith('core')]
        assert len(cores) == 18
        assert len(fp.units) >= 18


class TestUnitCellOverlap:
    @pytest.fixture
    def grid(self):
        # 1 mm columns
        return build_grid(dict(nx=4, ny=2, nz_heat=1, nz_sub=1, len_x=4e-3, len_y=2e-3))

    def overlap(self, grid, *units):
        fp = Floorplan(len_x=grid.spec.len_x, len_y=grid.spec.len_y, units=tuple(units))
        return unit_cell_overlap(fp, grid)

    def test_aligned_unit(self, grid):
        om = self.overlap(grid, FunctionalUnit(name='a', x0=1e-3, y0=0.0, w=1e-3, hgt=1e-3))
        assert om.columns[0].tolist() == [1]
        np.testing.assert_allclose(om.fractions[0], [1.0])

    def test_straddling_unit(self, grid):
        om = self.overlap(grid, FunctionalUnit(name='a', x0=0.5e-3, y0=0.0, w=1e-3, hgt=1e-3))
        assert om.columns[0].tolist() == [0, 1]
        np.testing.assert_allclose(om.fractions[0], [0.5, 0.5], rtol=1e-12)

    def test_one_and_a_half_columns(self, grid):
        om = self.overlap(grid, FunctionalUnit(name='a', x0=1e-3, y0=1e-3, w=1.5e-3, hgt=1e-3))
        assert om.columns[0].tolist() == [grid.nx + 1, grid.nx + 2]
        np.testing.assert_allclose(om.fractions[0], [2 / 3, 1 / 3], rtol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 3.0), st.floats(0.0, 1.0), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
    def test_fractions_conserve_footprint(self, x0, y0, w, hgt):
        grid = build_grid(dict(nx=4, ny=2, nz_heat=1, nz_sub=1, len_x=4e-3, len_y=2e-3))
        unit = FunctionalUnit(name='a', x0=x0 * 1e-3, y0=y0 * 1e-3, w=w * 1e-3, hgt=hgt * 1e-3)
        om = self.overlap(grid, unit)
        assert om.fractions[0].sum() == pytest.approx(1.0, rel=1e-12)
        assert np.all(om.fractions[0] > 0)
        assert np.asarray(om.matrix.sum(axis=0)).ravel() == pytest.approx([1.0], rel=1e-12)

    def test_extent_mismatch(self, grid):
        fp = Floorplan(len_x=5e-3, len_y=2e-3, units=())
        with pytest.raises(GeometryError):
            unit_cell_overlap(fp, grid)

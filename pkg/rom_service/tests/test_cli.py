import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))
from rom_service.errors import EXIT_CONFIG, EXIT_IO, EXIT_OK
from rom_service.fom.solver import load_snapshots
from rom_service.geometry.grid import build_grid
from rom_service.config.settings import load_config
from rom_service.rom.galerkin import load_fields
from rom_service.run import main
from rom_service.storage.reports import read_manifest

DEMO = Path(__file__).resolve().parents[1] / 'demo'
TINY = str(DEMO / 'tiny.cfg')


def run(command, out_dir, *extra):
    return main([command, '--config', TINY, '--out-dir', str(out_dir), *extra])


def snapshot_bytes(directory, *names):
    return {name: (directory / name).read_bytes() for name in names}


@pytest.fixture
def grid():
    return build_grid(load_config(TINY).grid_spec())


@pytest.fixture
def trained(tmp_path):
    assert run('fom-run', tmp_path) == EXIT_OK
    assert run('pod-train', tmp_path) == EXIT_OK
    return tmp_path


class TestFomRun:
    def test_snapshot_count(self, tmp_path, grid):
        assert run('fom-run', tmp_path) == EXIT_OK
        snaps = load_snapshots(tmp_path / 'snapshots_train.podt', grid)
        assert snaps.n_snapshots == 20
        manifest = read_manifest(tmp_path / 'snapshots_train.json')
        assert manifest['n_snapshots'] == 20
        assert (tmp_path / 'trace_train.csv').exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        run('fom-run', tmp_path)
        first = (tmp_path / 'snapshots_train.podt').read_bytes()
        trace = (tmp_path / 'trace_train.csv').read_bytes()
        run('fom-run', tmp_path)
        assert (tmp_path / 'snapshots_train.podt').read_bytes() == first
        assert (tmp_path / 'trace_train.csv').read_bytes() == trace

    def test_sample_every(self, tmp_path, grid):
        assert run('fom-run', tmp_path, '--override', 'sample_every=4') == EXIT_OK
        snaps = load_snapshots(tmp_path / 'snapshots_train.podt', grid)
        assert snaps.n_snapshots == 5
        np.testing.assert_allclose(snaps.times, np.arange(4, 21, 4) * 1e-4)


class TestPodTrain:
    def test_outputs(self, tmp_path, capsys):
        run('fom-run', tmp_path)
        capsys.readouterr()
        assert run('pod-train', tmp_path) == EXIT_OK
        assert 'err_theo' in capsys.readouterr().out
        spectrum = pd.read_csv(tmp_path / 'spectrum.csv')
        assert list(spectrum.columns) == ['mode_index', 'lambda', 'cumulative_err_theo']
        assert (tmp_path / 'basis.podt').exists()

    def test_rerun_is_byte_identical(self, trained):
        before = snapshot_bytes(trained, 'basis.podt', 'spectrum.csv')
        assert run('pod-train', trained) == EXIT_OK
        assert snapshot_bytes(trained, 'basis.podt', 'spectrum.csv') == before

    def test_pooled_snapshots(self, tmp_path):
        run('fom-run', tmp_path)
        run('fom-run', tmp_path, '--window', 'eval', '--override', 'eval_seed=11')
        code = run('pod-train', tmp_path, '--snapshots', str(tmp_path / 'snapshots_train.podt'),
                   '--snapshots', str(tmp_path / 'snapshots_eval.podt'))
        assert code == EXIT_OK

    def test_missing_snapshots(self, tmp_path):
        assert run('pod-train', tmp_path) == EXIT_IO


class TestRomRun:
    def test_final_cadence(self, trained):
        assert run('rom-run', trained) == EXIT_OK
        records = load_fields(trained / 'fields_chip.podt')
        assert records.values.shape == (8, 1)
        assert records.times[0] == pytest.approx(2e-3)
        heating = load_fields(trained / 'fields_heating.podt')
        assert heating.values.shape == (4, 1)
        trajectory = pd.read_csv(trained / 'trajectory.csv')
        assert len(trajectory) == 21
        assert (trained / 'slice_layer0.csv').exists()

    def test_every_step(self, trained):
        assert run('rom-run', trained, '--override', 'cadence=every') == EXIT_OK
        assert load_fields(trained / 'fields_chip.podt').values.shape[1] == 20

    def test_single_mode(self, trained):
        assert run('rom-run', trained, '--modes', '1') == EXIT_OK
        assert read_manifest(trained / 'rom_run.json')['M'] == 1

    def test_basis_from_other_grid(self, trained):
        assert run('rom-run', trained, '--override', 'nx=3') == EXIT_CONFIG

    def test_rerun_is_byte_identical(self, trained):
        names = ('trajectory.csv', 'fields_chip.podt', 'fields_heating.podt', 'slice_layer0.csv')
        run('rom-run', trained)
        before = snapshot_bytes(trained, *names)
        run('rom-run', trained)
        assert snapshot_bytes(trained, *names) == before

    def test_short_trace_without_held_out(self, trained):
        trace = trained / 'trace_train.csv'
        code = run('rom-run', trained, '--override', f'trace={trace}', '--override', 'eval_s=3e-3')
        assert code == EXIT_CONFIG


class TestValidate:
    def test_reports(self, tmp_path):
        assert run('validate', tmp_path) == EXIT_OK
        convergence = pd.read_csv(tmp_path / 'convergence.csv')
        assert len(convergence) == 3
        assert list(convergence.columns) == ['M', 'err_theo', 'err_num_chip', 'err_num_heat', 'eval_window_s']
        assert len(pd.read_csv(tmp_path / 'speedup.csv')) == 3
        assert not (tmp_path / 'extrapolation.csv').exists()

    def test_extrapolation_window(self, tmp_path):
        assert run('validate', tmp_path, '--override', 'eval_s=3e-3', '--threads', '2') == EXIT_OK
        df = pd.read_csv(tmp_path / 'extrapolation.csv')
        assert len(df) == 3

    def test_rerun_is_byte_identical(self, tmp_path):
        names = ('snapshots_train.podt', 'snapshots_eval.podt', 'basis.podt', 'spectrum.csv',
                 'convergence.csv', 'extrapolation.csv')
        run('validate', tmp_path, '--override', 'eval_s=3e-3')
        before = snapshot_bytes(tmp_path, *names)
        run('validate', tmp_path, '--override', 'eval_s=3e-3', '--threads', '2')
        assert snapshot_bytes(tmp_path, *names) == before

    def test_matches_stages_run_one_by_one(self, tmp_path):
        names = ('snapshots_train.podt', 'snapshots_eval.podt', 'basis.podt', 'spectrum.csv')
        composed, staged = tmp_path / 'composed', tmp_path / 'staged'
        assert run('validate', composed, '--override', 'eval_seed=11') == EXIT_OK
        assert run('fom-run', staged, '--override', 'eval_seed=11') == EXIT_OK
        assert run('pod-train', staged, '--override', 'eval_seed=11') == EXIT_OK
        assert run('fom-run', staged, '--window', 'eval', '--override', 'eval_seed=11') == EXIT_OK
        assert snapshot_bytes(composed, *names) == snapshot_bytes(staged, *names)


class TestProbeAndSpectrum:
    def test_point_against_reference(self, tmp_path):
        run('validate', tmp_path)
        assert run('probe', tmp_path, '--kind', 'point', '--x', '5e-3', '--y', '5e-3') == EXIT_OK
        df = pd.read_csv(tmp_path / 'probe_point.csv')
        assert len(df) == 20
        assert 'abs_err_K' in df.columns

    def test_line_without_reference(self, trained):
        assert run('probe', trained, '--kind', 'line', '--axis', 'y', '--offset', '1e-2') == EXIT_OK
        df = pd.read_csv(trained / 'probe_line_y.csv')
        assert list(df.columns) == ['position_m', 'value_K']
        assert len(df) == 2

    def test_mode_profiles(self, trained):
        assert run('probe', trained, '--kind', 'modes', '--offset', '1e-2') == EXIT_OK
        assert (trained / 'mode_profiles_x.csv').exists()

    def test_out_of_domain_probe(self, trained):
        assert run('probe', trained, '--kind', 'point', '--x', '1.0') == EXIT_CONFIG

    def test_spectrum(self, trained):
        assert run('spectrum', trained) == EXIT_OK
        assert (trained / 'spectrum.csv').exists()


class TestExitCodes:
    def test_missing_trace(self, tmp_path):
        assert run('fom-run', tmp_path, '--override', f"trace={tmp_path / 'absent.csv'}") == EXIT_IO

    def test_invalid_config(self, tmp_path):
        assert run('fom-run', tmp_path, '--override', 'nx=0') == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        code = main(['fom-run', '--config', str(tmp_path / 'absent.cfg'), '--out-dir', str(tmp_path)])
        assert code == EXIT_IO

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(['simulate'])

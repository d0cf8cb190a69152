import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))
from rom_service.errors import StorageError
from rom_service.storage.podt import (
    KIND_BASIS,
    KIND_SNAPSHOTS,
    PodtReader,
    PodtWriter,
    atomic_write,
)
from rom_service.storage.reports import read_manifest, write_csv, write_manifest


@pytest.fixture
def container(tmp_path):
    path = tmp_path / 'data.podt'
    with atomic_write(path) as f:
        writer = PodtWriter(f, KIND_SNAPSHOTS, grid_hash=0xDEADBEEF)
        writer.counts(2, 3)
        writer.floats(np.arange(6.0).reshape(2, 3))
    return path


class TestAtomicWrite:
    def test_failure_leaves_no_files(self, tmp_path):
        path = tmp_path / 'out.podt'
        with pytest.raises(RuntimeError):
            with atomic_write(path) as f:
                f.write(b'partial')
                raise RuntimeError('interrupted')
        assert list(tmp_path.iterdir()) == []

    def test_failure_keeps_previous_file(self, tmp_path):
        path = tmp_path / 'out.csv'
        path.write_text('old\n')
        with pytest.raises(RuntimeError):
            with atomic_write(path, 'w') as f:
                f.write('new')
                raise RuntimeError('interrupted')
        assert path.read_text() == 'old\n'
        assert list(tmp_path.iterdir()) == [path]

    def test_creates_parent_directories(self, tmp_path):
        path = tmp_path / 'a' / 'b' / 'out.bin'
        with atomic_write(path) as f:
            f.write(b'x')
        assert path.read_bytes() == b'x'


class TestPodtReader:
    def test_header_layout(self, container):
        raw = container.read_bytes()
        assert raw[:4] == b'PODT'
        assert np.frombuffer(raw[4:8], dtype='<u4')[0] == 1
        assert raw[8:12] == KIND_SNAPSHOTS
        assert np.frombuffer(raw[12:20], dtype='<u8')[0] == 0xDEADBEEF
        np.testing.assert_array_equal(np.frombuffer(raw[20:36], dtype='<u8'), [2, 3])
        np.testing.assert_array_equal(np.frombuffer(raw[36:], dtype='<f8'), [0.0, 3.0, 1.0, 4.0, 2.0, 5.0])

    def test_reads_back_column_major(self, container):
        reader = PodtReader(container, KIND_SNAPSHOTS)
        assert reader.grid_hash == 0xDEADBEEF
        assert reader.counts(2) == (2, 3)
        np.testing.assert_array_equal(reader.floats((2, 3)), np.arange(6.0).reshape(2, 3))
        reader.finish()

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError, match='not found'):
            PodtReader(tmp_path / 'absent.podt', KIND_SNAPSHOTS)

    def test_bad_magic(self, container):
        data = bytearray(container.read_bytes())
        data[0:4] = b'NOPE'
        container.write_bytes(bytes(data))
        with pytest.raises(StorageError, match='not a PODT'):
            PodtReader(container, KIND_SNAPSHOTS)

    def test_bad_version(self, container):
        data = bytearray(container.read_bytes())
        data[4:8] = np.array([2], dtype='<u4').tobytes()
        container.write_bytes(bytes(data))
        with pytest.raises(StorageError, match='version 2'):
            PodtReader(container, KIND_SNAPSHOTS)

    def test_wrong_kind(self, container):
        with pytest.raises(StorageError, match='expected'):
            PodtReader(container, KIND_BASIS)

    def test_truncated_header(self, container):
        container.write_bytes(container.read_bytes()[:10])
        with pytest.raises(StorageError, match='truncated'):
            PodtReader(container, KIND_SNAPSHOTS)

    def test_truncated_body(self, container):
        container.write_bytes(container.read_bytes()[:-1])
        reader = PodtReader(container, KIND_SNAPSHOTS)
        reader.counts(2)
        with pytest.raises(StorageError, match='truncated'):
            reader.floats((2, 3))

    def test_trailing_bytes(self, container):
        container.write_bytes(container.read_bytes() + b'\0' * 8)
        reader = PodtReader(container, KIND_SNAPSHOTS)
        reader.counts(2)
        reader.floats((2, 3))
        with pytest.raises(StorageError, match='trailing'):
            reader.finish()


class TestReports:
    def test_csv_is_byte_deterministic(self, tmp_path):
        df = pd.DataFrame({'M': [1, 3], 'err': [0.1 + 0.2, 1 / 3]})
        first = write_csv(df, tmp_path / 'a.csv').read_bytes()
        second = write_csv(df.copy(), tmp_path / 'b.csv').read_bytes()
        assert first == second
        assert b'\r' not in first

    def test_csv_keeps_full_precision(self, tmp_path):
        df = pd.DataFrame({'value': [0.1 + 0.2]})
        again = pd.read_csv(write_csv(df, tmp_path / 'v.csv'), float_precision='round_trip')
        assert again['value'].iloc[0] == 0.1 + 0.2

    def test_manifest_round_trip(self, tmp_path):
        manifest = {'stage': 'rom-run', 'M': 5, 'post_seconds': {'chip': 0.25}}
        path = write_manifest(manifest, tmp_path / 'run.json')
        assert read_manifest(path) == manifest
        assert path.read_text().index('"M"') < path.read_text().index('"stage"')

"""
PODT binary containers and atomic artifact writes.

Layout shared by every container (little-endian):
    magic   4 bytes  b'PODT'
    version uint32
    kind    4 bytes  b'SNAP' | b'BASE' | b'FELD'
    grid    uint64   grid hash
followed by a kind-specific body of uint64 counts and float64 arrays.
Matrices are stored column-major.
"""

import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import BinaryIO, Iterator, Tuple, Union

import numpy as np

from rom_service.errors import StorageError

logger = logging.getLogger(__name__)

MAGIC = b'PODT'
VERSION = 1

KIND_SNAPSHOTS = b'SNAP'
KIND_BASIS = b'BASE'
KIND_FIELDS = b'FELD'

_U32 = np.dtype('<u4')
_U64 = np.dtype('<u8')
_F64 = np.dtype('<f8')


@contextmanager
def atomic_write(path: Union[str, Path], mode: str = 'wb') -> Iterator:
    """
    Write to a temporary file next to path and rename it into place on success.

    Usage:
        with atomic_write(out / 'basis.podt') as f:
            f.write(payload)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    newline = '' if 'b' not in mode else None
    try:
        with os.fdopen(fd, mode, newline=newline) as handle:
            yield handle
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


class PodtWriter:
    """Sequential writer for one container"""

    def __init__(self, handle: BinaryIO, kind: bytes, grid_hash: int):
        self.handle = handle
        handle.write(MAGIC)
        handle.write(np.array([VERSION], dtype=_U32).tobytes())
        handle.write(kind)
        handle.write(np.array([grid_hash], dtype=_U64).tobytes())

    def counts(self, *values: int):
        self.handle.write(np.array(values, dtype=_U64).tobytes())

    def floats(self, values: np.ndarray):
        # column-major for matrices
        self.handle.write(np.asarray(values, dtype=_F64).tobytes(order='F'))


class PodtReader:
    """Sequential reader with truncation checks"""

    def __init__(self, path: Union[str, Path], kind: bytes):
        self.path = Path(path)
        try:
            self.data = self.path.read_bytes()
        except FileNotFoundError:
            raise StorageError(f"Artifact not found: {self.path}") from None
        self.offset = 0

        magic = self._take(4)
        if magic != MAGIC:
            raise StorageError(f"{self.path} is not a PODT file (magic {magic!r})")
        version = int(np.frombuffer(self._take(4), dtype=_U32)[0])
        if version != VERSION:
            raise StorageError(f"{self.path} has format version {version}, expected {VERSION}")
        found = self._take(4)
        if found != kind:
            raise StorageError(f"{self.path} holds {found!r} data, expected {kind!r}")
        self.grid_hash = int(np.frombuffer(self._take(8), dtype=_U64)[0])

    def _take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise StorageError(f"{self.path} is truncated at byte {len(self.data)}")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def counts(self, n: int) -> Tuple[int, ...]:
        return tuple(int(v) for v in np.frombuffer(self._take(8 * n), dtype=_U64))

    def floats(self, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else shape
        size = int(np.prod(shape))
        flat = np.frombuffer(self._take(8 * size), dtype=_F64)
        return flat.reshape(shape, order='F').astype(np.float64)

    def finish(self):
        if self.offset != len(self.data):
            raise StorageError(f"{self.path} has {len(self.data) - self.offset} trailing bytes")

"""
CSV tables and JSON manifests, written atomically with a fixed float format.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import pandas as pd

from rom_service.storage.podt import atomic_write

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    with atomic_write(path, 'w') as f:
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.info(f"Wrote {len(df)} rows to {path}")
    return Path(path)


def write_manifest(manifest: Dict[str, Any], path: Union[str, Path]) -> Path:
    with atomic_write(path, 'w') as f:
        f.write(json.dumps(manifest, sort_keys=True, indent=2) + '\n')
    return Path(path)


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)

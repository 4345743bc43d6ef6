"""Byte-stable ``.npz`` writing."""

from __future__ import annotations

import zipfile
from pathlib import Path

import numpy as np


def write_npz(path, arrays: dict[str, np.ndarray]) -> Path:
    """``np.savez`` equivalent with fixed zip timestamps, so equal content gives equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arrays[name]), allow_pickle=False)
    return path

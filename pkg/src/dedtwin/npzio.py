"""Byte-reproducible ``.npz`` writing.

``numpy.savez`` stamps each zip member with the current time, so two
identical saves differ.  Members written here carry a fixed timestamp.
"""

from __future__ import annotations

import io
import zipfile

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_npz(file, **arrays) -> None:
    """Write ``arrays`` to ``file`` (path or binary file object) as an npz archive."""
    with zipfile.ZipFile(file, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())

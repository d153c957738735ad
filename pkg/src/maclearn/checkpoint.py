"""Self-describing binary parameter files.

Format: a magic line, one JSON header line carrying the layout name, the
dimension list, the element count and an endianness tag, then the raw
little-endian float64 payload. A ``<file>.meta.json`` sidecar records run
provenance (seed, episode count, config hash). Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .errors import ShapeError

MAGIC = b"MACLEARNPARAMS1\n"


def save_params(path: str | Path, layout_name: str, dims, flat: np.ndarray,
                metadata: dict | None = None) -> None:
    path = Path(path)
    header = json.dumps({
        "layout": layout_name,
        "dims": [int(d) for d in dims],
        "count": int(flat.size),
        "endian": "little",
    })
    payload = np.ascontiguousarray(flat, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode() + b"\n")
        fh.write(payload)
    if metadata is not None:
        sidecar_path(path).write_text(
            json.dumps(metadata, sort_keys=True, indent=2) + "\n")


def load_params(path: str | Path) -> tuple[str, list[int], np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ShapeError(f"{path}: not a parameter file")
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    count = int(header["count"])
    if len(payload) != 8 * count:
        raise ShapeError(f"{path}: payload holds {len(payload)} bytes, "
                         f"header declares {count} float64 values")
    flat = np.frombuffer(payload, dtype="<f8").copy()
    if header.get("endian") == "big" or (
            header.get("endian") == "native" and sys.byteorder == "big"):
        flat = flat.byteswap()
    return header["layout"], [int(d) for d in header["dims"]], flat


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def load_metadata(path: str | Path) -> dict:
    return json.loads(sidecar_path(path).read_text())

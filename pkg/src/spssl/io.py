"""Flat text configs, append-only metrics files, and checkpoint containers.

Config files are flat ``dotted.key = value`` text; values parse as JSON
scalars. Metrics are delimited text with a header row; wall-clock timestamps
live in a ``.times`` sidecar so primary outputs stay byte-identical across
reruns. Checkpoints are a single file: magic, a JSON manifest (tensor names,
shapes, dtypes, offsets, step, config hash) and raw little-endian values.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from pathlib import Path

import numpy as np

from spssl.autodiff import Tensor

CKPT_MAGIC = b"SPCK"


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        out[key.strip()] = _parse_value(value.strip())
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare string


def dump_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` override strings on top of a config dict."""
    out = dict(cfg)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} must look like key=value")
        out[key.strip()] = _parse_value(value.strip())
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


class MetricsWriter:
    """Append-only delimited metrics rows; timestamps go to a sidecar file."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = list(columns)
        self._fh = open(self.path, "w")
        self._times = open(str(self.path) + ".times", "w")
        self._fh.write(",".join(self.columns) + "\n")

    def write(self, row: dict) -> None:
        cells = []
        for col in self.columns:
            value = row[col]
            cells.append(f"{value:.10g}" if isinstance(value, float) else str(value))
        self._fh.write(",".join(cells) + "\n")
        self._times.write(f"{time.time():.3f}\n")

    def close(self) -> None:
        self._fh.close()
        self._times.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> dict:
    """Read a metrics file into column arrays (floats where possible)."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    out = {}
    for i, col in enumerate(header):
        vals = [r[i] for r in rows]
        try:
            out[col] = np.array([float(v) for v in vals])
        except ValueError:
            out[col] = np.array(vals)
    return out


def save_checkpoint(path, tensors: dict, step: int, cfg_hash: str, extra: dict | None = None) -> None:
    """Write named arrays to a flat binary container with a JSON manifest.

    ``tensors`` maps name -> Tensor or ndarray. Values are stored raw in
    little-endian order at the offsets recorded in the manifest.
    """
    arrays = {}
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        arrays[name] = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    manifest = {"version": 1, "step": int(step), "config_hash": cfg_hash,
                "extra": extra or {}, "tensors": []}
    offset = 0
    for name in sorted(arrays):
        arr = arrays[name]
        manifest["tensors"].append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,
            "offset": offset,
            "nbytes": arr.nbytes,
        })
        offset += arr.nbytes
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for name in sorted(arrays):
            f.write(arrays[name].tobytes())


def load_checkpoint(path):
    """Read a checkpoint container; returns (arrays dict, manifest dict)."""
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError("not a spssl checkpoint")
    (hlen,) = struct.unpack("<I", blob[4:8])
    manifest = json.loads(blob[8:8 + hlen].decode())
    body = blob[8 + hlen:]
    arrays = {}
    for entry in manifest["tensors"]:
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return arrays, manifest

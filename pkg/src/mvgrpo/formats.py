"""File formats: netpbm images, CSV records and config hashing."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .imaging import to_uint8

MILLI = 1000.0


class FormatError(ValueError):
    pass


def write_ppm(path, image: np.ndarray) -> None:
    """8-bit binary pixmap (P6), rows top to bottom."""
    data = to_uint8(image)
    if data.ndim != 3 or data.shape[2] != 3:
        raise FormatError(f"expected an (H, W, 3) image, got {data.shape}")
    h, w = data.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def write_pgm8(path, gray: np.ndarray) -> None:
    """8-bit binary graymap (P5) of values in [0, 1]."""
    data = to_uint8(gray)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def write_depth_pgm(path, depth: np.ndarray) -> None:
    """16-bit binary graymap of depth in thousandths of a scene unit (big-endian, 0 = no hit)."""
    milli = np.clip(np.round(depth * MILLI), 0, 65535).astype(">u2")
    h, w = depth.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + milli.tobytes())


def _read_header(data: bytes):
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    return tokens, pos + 1


def read_netpbm(path) -> np.ndarray:
    """Read P5 / P6 files written above; returns integer arrays."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), start = _read_header(data)
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    channels = {"P5": 1, "P6": 3}.get(magic)
    if channels is None:
        raise FormatError(f"{path}: unsupported netpbm magic {magic!r}")
    arr = np.frombuffer(data[start:], dtype=dtype)
    if arr.size != w * h * channels:
        raise FormatError(f"{path}: expected {w * h * channels} samples, found {arr.size}")
    return arr.reshape((h, w, 3) if channels == 3 else (h, w))


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise FormatError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([format_value(v) for v in row])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

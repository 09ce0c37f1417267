"""On-disk formats: snapshot CSV, Brownian-increment binaries, hashing."""
from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from .basis import SpectralBasis

DW_MAGIC = b"SSPDEDW\x00"
DW_VERSION = 1
_DW_HEADER = struct.Struct("<8sIIQ")  # magic, version, K, steps


class ReplayDataMissing(FileNotFoundError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_snapshots(path, basis: SpectralBasis, times, states) -> None:
    """Long format: one row per (time, mode); floats written with repr so reading is exact."""
    cols = ["time"] + [f"mode_index_{i + 1}" for i in range(basis.dim)] + ["coefficient"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for t, X in zip(times, states):
            tt = repr(float(t))
            for mi, c in zip(basis.modes, X):
                w.writerow([tt, *map(int, mi), repr(float(c))])


def read_snapshots(path, basis: SpectralBasis):
    times, states, current, last_t = [], [], None, None
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        d = len(header) - 2
        if d != basis.dim:
            raise ValueError(f"{path}: snapshot dimension {d} does not match basis")
        for row in r:
            t = float(row[0])
            if t != last_t:
                current = np.zeros(basis.n)
                states.append(current)
                times.append(t)
                last_t = t
            current[basis.index_of(tuple(int(v) for v in row[1:1 + d]))] = float(row[-1])
    return np.array(times), np.array(states)


def write_increments(path, dW: np.ndarray) -> None:
    dW = np.ascontiguousarray(dW, dtype="<f8")
    steps, K = dW.shape
    with open(path, "wb") as fh:
        fh.write(_DW_HEADER.pack(DW_MAGIC, DW_VERSION, K, steps))
        fh.write(dW.tobytes())


def read_increments(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ReplayDataMissing(f"replay data absent: {path}")
    raw = path.read_bytes()
    if len(raw) < _DW_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, K, steps = _DW_HEADER.unpack_from(raw)
    if magic != DW_MAGIC or version != DW_VERSION:
        raise ValueError(f"{path}: not an increment file (magic {magic!r}, version {version})")
    body = np.frombuffer(raw, dtype="<f8", offset=_DW_HEADER.size)
    if body.size != K * steps:
        raise ValueError(f"{path}: expected {K * steps} values, found {body.size}")
    return body.reshape(steps, K).astype(float)

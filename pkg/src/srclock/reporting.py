"""CSV/JSON serialization and the run manifest.

CSV numbers are written with 17 significant digits so that re-reading
reproduces the float64 arrays bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np


def write_csv(path: Path, columns: dict) -> Path:
    """Write named 1-D arrays as CSV columns (header = names)."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    length = len(arrays[0])
    if any(len(a) != length for a in arrays):
        raise ValueError("all columns must have equal length")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(length):
            row = []
            for a in arrays:
                v = a[i]
                if np.issubdtype(a.dtype, np.integer):
                    row.append(int(v))
                else:
                    row.append(format(float(v), ".17g"))
            writer.writerow(row)
    return path


def read_csv(path: Path) -> dict:
    """Read a write_csv file back into named float arrays."""
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(names)))
    return {name: data[:, i] for i, name in enumerate(names)}


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str)
                    + "\n")
    return path


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, config_hash: str, seed: int,
                   extra: dict | None = None) -> Path:
    """Record config hash, seed, code version and per-file checksums."""
    from . import __version__
    out_dir = Path(out_dir)
    files = {}
    for p in sorted(out_dir.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            files[p.name] = file_sha256(p)
    manifest = {
        "config_hash": config_hash,
        "seed": seed,
        "code_version": __version__,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    return write_json(out_dir / "manifest.json", manifest)

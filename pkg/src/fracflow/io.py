"""Run directory layout and file formats.

    run_dir/config.json          resolved configuration
    run_dir/manifest.json        status, versions, timings, checks
    run_dir/ledger.csv           energy ledger, one row per step
    run_dir/snapshots/u_0000.csv index, x[, y], value
    run_dir/z/z_0001.csv         i, j, Z_ij for i < j; exterior values as j = -1

Floats are written with 17 significant digits, so values round-trip exactly.
"""
from __future__ import annotations

import csv
import json
import os
import platform
import tempfile
from pathlib import Path

import numpy as np

from .grid import Grid
from .step import SignField

FMT = "{:.17g}"


def snapshot_path(run_dir: Path, k: int) -> Path:
    return Path(run_dir) / "snapshots" / f"u_{k:04d}.csv"


def write_field_csv(path: Path, u: np.ndarray, grid: Grid) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = ["x", "y"][: grid.dimension]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["index", *coords, "value"])
        for i, (c, val) in enumerate(zip(grid.centers, u)):
            wr.writerow([i, *(FMT.format(x) for x in c), FMT.format(val)])


def write_sign_field_csv(path: Path, z: SignField) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = z.size
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["i", "j", "Z_ij"])
        for i in range(n):
            for j in range(i + 1, n):
                wr.writerow([i, j, FMT.format(z.pairs[i, j])])
        for i in range(n):
            wr.writerow([i, -1, FMT.format(z.exterior[i])])


def write_json_atomic(path: Path, payload: dict) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def versions() -> dict:
    import numpy
    import pydantic
    import scipy

    from . import __version__

    return {"fracflow": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "pydantic": pydantic.__version__}


def write_rows_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([FMT.format(x) if isinstance(x, float) else x for x in r])

"""Deterministic CSV/JSON writers, plot-data sidecars and the run manifest.

CSV files follow RFC 4180 (CRLF line ends, mandatory header, ``.`` as the
decimal separator).  Floats are written with ``repr`` so they round-trip
exactly; JSON uses sorted keys.  Identical inputs therefore give
byte-identical files.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["to_plain", "write_csv", "write_json", "emit_plotdata", "RunManifest",
           "write_manifest", "read_manifest", "FIGURES"]

# Which published figure each plot kind is the analogue of.
FIGURES = {
    "enhance": "Fig. 1b",
    "telegraph": "Fig. 2a",
    "capture": "Fig. 2b",
    "capture-rates": "Fig. 2c",
    "init-eff": "Fig. 2d",
    "ple-series": "Fig. 3a",
    "ple-centres": "Fig. 3b",
    "readout": "Fig. 4a",
    "cpt": "Fig. 4b",
}


def to_plain(obj):
    """Convert numpy scalars/arrays, enums, tuples and dataclasses to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, enum.Enum):
        return obj.value
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_plain(dataclasses.asdict(obj))
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _cell(v):
    v = to_plain(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> Path:
    import io as _stdio

    buf = _stdio.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    path = Path(path)
    _atomic_write(path, buf.getvalue().encode("utf-8"))
    return path


def write_json(path, obj) -> Path:
    text = json.dumps(to_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    path = Path(path)
    _atomic_write(path, text.encode("utf-8"))
    return path


def emit_plotdata(result, kind, out_dir, stem=None) -> list:
    """Write plot-ready data plus a JSON sidecar describing it.

    Parameters
    ----------
    result : dict
        ``{"columns": [(name, unit), ...], "rows": iterable}`` for a column
        file, or ``{"matrix": 2-D array, "row_axis": (name, unit, values),
        "col_axis": (name, unit, values)}`` for a waterfall matrix.
    kind : str
        Plot kind, a key of :data:`FIGURES`.
    out_dir : path

    Returns
    -------
    list of Path
        The data file and its sidecar.
    """
    out_dir = Path(out_dir)
    stem = stem or f"plot_{kind.replace('-', '_')}"
    data_path = out_dir / f"{stem}.csv"
    side = {"kind": kind, "file": data_path.name,
            "description": f"reproduces {FIGURES[kind]}" if kind in FIGURES else kind}
    if "matrix" in result:
        m = np.asarray(result["matrix"])
        rname, runit, rvals = result["row_axis"]
        cname, cunit, cvals = result["col_axis"]
        header = [rname] + [_cell(c) for c in cvals]
        write_csv(data_path, header, ([r] + list(row) for r, row in zip(rvals, m)))
        side.update(layout="matrix", shape=list(m.shape),
                    rows={"name": rname, "unit": runit},
                    columns={"name": cname, "unit": cunit},
                    values={"name": result.get("value_name", "counts"),
                            "unit": result.get("value_unit", "counts")})
    else:
        cols = result["columns"]
        write_csv(data_path, [c[0] for c in cols], result["rows"])
        side.update(layout="columns", axes=[{"name": n, "unit": u} for n, u in cols])
    side_path = write_json(out_dir / f"{stem}.meta.json", side)
    return [data_path, side_path]


@dataclasses.dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    version: str
    outputs: list
    wall_time: float
    argv: list = dataclasses.field(default_factory=list)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, manifest: RunManifest) -> Path:
    """Write ``manifest.json`` atomically.

    Each output is listed with its SHA-256 checksum.  The wall time makes
    the manifest itself the only file that differs between repeated runs.
    """
    out_dir = Path(out_dir)
    body = dataclasses.asdict(manifest)
    body["outputs"] = [{"file": Path(p).name, "sha256": _sha256(p)} for p in manifest.outputs]
    return write_json(out_dir / "manifest.json", body)


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))

"""Deterministic CSV/JSON writers shared by the CLI harness.

Every artifact embeds the package version and the config hash; floats are
written with 17 significant digits so reruns with the same config are
byte-identical.  CSV dialect: comma-separated, one header row, LF endings,
a single leading '#' provenance comment.
"""

from __future__ import annotations

import hashlib
import json
from importlib import metadata

import numpy as np

__all__ = ["artifact_version", "config_hash", "write_csv", "read_csv",
           "write_json", "fmt"]


def artifact_version() -> str:
    try:
        return metadata.version("qplab")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, complex):
        raise TypeError("split complex values into re/im columns")
    return format(float(x), ".17g")


def write_csv(path, header, columns, config: dict | None = None):
    """Write aligned columns under a header row, with a provenance comment."""
    cols = [np.asarray(c) for c in columns]
    n = cols[0].size if cols else 0
    if any(c.size != n for c in cols):
        raise ValueError("columns must have equal length")
    if len(header) != len(cols):
        raise ValueError("header does not match the column count")
    tag = config_hash(config) if config is not None else "none"
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# qplab {artifact_version()} config={tag}\n")
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(fmt(c[i]) for c in cols) + "\n")


def read_csv(path):
    """Read back a qplab CSV: (header list, dict column -> float array)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    rows = [ln for ln in lines if not ln.startswith("#")]
    header = rows[0].split(",")
    data = {h: [] for h in header}
    for ln in rows[1:]:
        for h, v in zip(header, ln.split(",")):
            data[h].append(float(v))
    return header, {h: np.asarray(v) for h, v in data.items()}


def write_json(path, payload: dict, config: dict | None = None):
    out = dict(payload)
    out["qplab_version"] = artifact_version()
    if config is not None:
        out["config_sha256"] = config_hash(config)
    with open(path, "w", newline="\n") as fh:
        json.dump(out, fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"not JSON-serializable: {type(obj)}")

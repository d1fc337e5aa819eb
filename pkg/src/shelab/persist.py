"""Result CSVs and the JSON run manifest.

Output is deterministic for identical inputs: fixed column order, ``repr``
floats, sorted JSON keys and no timestamps, so reruns are byte-identical.
"""

import csv
import dataclasses
import json
import math
import os

import numpy as np

__all__ = ["persist_result", "read_manifest", "to_jsonable", "MANIFEST_KEYS"]

MANIFEST_KEYS = ("config_digest", "seed", "noise_hash", "verdicts", "tool_version")


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings 'nan', 'inf', '-inf'."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def persist_result(result, out_dir, config=None, tool_version=None):
    """Write ``<experiment>.csv`` and ``<experiment>.manifest.json``; returns the manifest path."""
    from . import __version__
    name = result.experiment.replace("-", "_")
    try:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{name}.csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(result.columns)
            for row in result.rows:
                w.writerow([_cell(row.get(c)) for c in result.columns])
        manifest = {
            "experiment": result.experiment,
            "status": result.status,
            "config_digest": result.config_digest,
            "seed": result.seed,
            "noise_hash": result.noise_hash,
            "verdicts": dict(result.verdicts),
            "tool_version": tool_version or __version__,
            "csv": os.path.basename(csv_path),
            "columns": list(result.columns),
            "estimates": to_jsonable(result.estimates),
            "notes": list(result.notes),
        }
        if config is not None:
            manifest["config"] = to_jsonable(config)
        path = os.path.join(out_dir, f"{name}.manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write results to {out_dir!r}: {exc.strerror}") from exc
    return path


def read_manifest(path):
    """Load a manifest and check the required keys are present."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    missing = [k for k in MANIFEST_KEYS if k not in data]
    if missing:
        raise ValueError(f"manifest {path} lacks {', '.join(missing)}")
    return data

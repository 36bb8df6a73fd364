"""Versioned JSON checkpoints for named parameter arrays.

Values are stored row-major with shortest round-trip float form, so a
save/load cycle is bit-exact and same-seed runs write identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import DataError

CHECKPOINT_VERSION = 1


def save_arrays(
    path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]
) -> None:
    path = Path(path)
    doc = {
        "format": kind,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "arrays": {
            name: {
                "shape": list(arr.shape),
                "values": [float(v) for v in np.asarray(arr, dtype=np.float64).ravel()],
            }
            for name, arr in arrays.items()
        },
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(doc, separators=(",", ":"), allow_nan=False), encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


def load_arrays(path: str | Path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed checkpoint: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != kind:
        raise DataError(f"{path}: not a {kind} checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        arrays = {
            name: np.asarray(spec["values"], dtype=np.float64).reshape(spec["shape"])
            for name, spec in doc["arrays"].items()
        }
        return doc["meta"], arrays
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid checkpoint structure: {exc}") from exc

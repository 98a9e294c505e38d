"""Parameter checkpoints: a versioned JSON map of name -> shape + values.

Format (documented for external consumers):

    {
      "format": "slateauction-checkpoint",
      "version": 1,
      "meta": {...arbitrary JSON, e.g. the model config...},
      "params": {"<name>": {"shape": [..], "data": [row-major float64 ..]}}
    }

Values round-trip bit-exactly (json emits shortest-repr float64).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "slateauction-checkpoint"
VERSION = 1


def save_params(path, params, meta=None):
    """Write ``{name: Tensor}`` to ``path`` as versioned JSON."""
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path):
    """Read a checkpoint; returns ``(meta, {name: np.ndarray})``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arrays = {}
    for name, entry in doc["params"].items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        arrays[name] = arr
    return doc.get("meta", {}), arrays


def restore_into(params, arrays):
    """Copy checkpoint arrays into live tensors, verifying names and shapes."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, t in params.items():
        arr = arrays[name]
        if arr.shape != t.data.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {t.data.shape}")
        t.data = arr.copy()

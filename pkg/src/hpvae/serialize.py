"""Versioned on-disk containers for pipeline artifacts.

Every artifact (interaction matrix, splits, prior tables, checkpoints)
is a numpy ``.npz`` archive with three reserved keys:

* ``__kind__``    -- artifact type tag, checked on load
* ``__version__`` -- container format version (currently 1)
* ``__meta__``    -- JSON-encoded metadata dict (config hash, counts, ...)

All remaining keys are shape-tagged numpy arrays.  Loading an archive
with the wrong kind or an unknown version fails loudly rather than
misinterpreting the payload.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1


def save_bundle(path, kind: str, arrays: dict, meta: dict) -> None:
    payload = {
        "__kind__": np.array(kind),
        "__version__": np.array(FORMAT_VERSION, dtype=np.int64),
        "__meta__": np.array(json.dumps(meta, sort_keys=True)),
    }
    overlap = set(payload) & set(arrays)
    if overlap:
        raise ValueError(f"reserved bundle keys used: {sorted(overlap)}")
    payload.update(arrays)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_bundle(path, kind: str) -> tuple[dict, dict]:
    """Return (arrays, meta); raises FormatError on kind/version mismatch."""
    with np.load(path, allow_pickle=False) as npz:
        data = {k: npz[k] for k in npz.files}
    got_kind = str(data.pop("__kind__", ""))
    version = int(data.pop("__version__", -1))
    if got_kind != kind:
        raise FormatError(f"{path}: expected artifact kind {kind!r}, found {got_kind!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    meta = json.loads(str(data.pop("__meta__")))
    return data, meta

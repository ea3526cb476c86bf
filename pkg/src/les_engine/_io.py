"""Small serialization helpers shared by the file formats."""

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x):
    """Format a float with 17 significant digits (lossless for float64)."""
    return format(float(x), ".17g")


def to_jsonable(obj):
    """Recursively convert numpy containers/scalars into plain Python objects."""
    if isinstance(obj, np.ndarray):
        return [to_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(x) for x in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj, **kw):
    # repr() of a Python float is the shortest string that round-trips exactly
    return json.dumps(to_jsonable(obj), sort_keys=True, allow_nan=False, **kw)


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise

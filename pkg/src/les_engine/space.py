"""The 41-coordinate emotion space.

Coordinates 1-17 (the action part ``u``) hold dataset-standardized AU
activations. Coordinates 18-34 hold per-emotion normalized AU magnitudes and
35-41 form a seven-slot one-hot tail carrying the origin distance of 18-34;
together 18-41 are the isolation part ``v``.

All functions broadcast over leading axes, so a whole ``(n, 17)`` matrix of
frames can be mapped at once.
"""

import csv
import io
import json

import numpy as np

from ._io import fmt
from .au import N_AU, NEUTRAL, SLOT_EMOTIONS, AU_MAX, AU_MIN, AUFrame, slot_index
from .errors import BadParams, StatsIncomplete

N_SLOTS = len(SLOT_EMOTIONS)
N_ISO = N_AU + N_SLOTS          # 24
N_LES = N_AU + N_ISO            # 41

OPT2_MODES = ("literal", "centered")


def _vec17(stats, name):
    arr = getattr(stats, name, None)
    if arr is None:
        raise StatsIncomplete(f"stats has no {name}")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != (N_AU,):
        raise StatsIncomplete(f"stats.{name} must have {N_AU} entries, got shape {arr.shape}")
    return arr


def _emo17(stats, table_name, emotion):
    table = getattr(stats, table_name, None) or {}
    if emotion not in table:
        raise StatsIncomplete(f"stats has no {table_name} entry for {emotion!r}")
    arr = np.asarray(table[emotion], dtype=np.float64)
    if arr.shape != (N_AU,):
        raise StatsIncomplete(f"stats.{table_name}[{emotion!r}] has shape {arr.shape}")
    return arr


def standardize(au, stats):
    """Dataset z-score of each AU: ``(AU_i - mu_D,i) / sigma_D,i``."""
    mu = _vec17(stats, "mu_d")
    sigma = _vec17(stats, "sigma_d")
    return (np.asarray(au, dtype=np.float64) - mu) / sigma


def inverse_standardize(u, stats):
    """Map action coordinates back to AU intensities.

    Returns:
        (au, clamped): intensities clamped to [0, 5] and a boolean mask of
        the entries that needed clamping.
    """
    mu = _vec17(stats, "mu_d")
    sigma = _vec17(stats, "sigma_d")
    raw = np.asarray(u, dtype=np.float64) * sigma + mu
    clamped = (raw < AU_MIN) | (raw > AU_MAX)
    return np.clip(raw, AU_MIN, AU_MAX), clamped


def isolate(au, stats, emotion, mode=None):
    """Per-emotion normalized AU magnitude (coordinates 18-34).

    ``literal`` mode computes ``|AU_j| / sigma_emo,j`` on raw intensities;
    ``centered`` uses ``|AU_j - mu_emo,j| / sigma_emo,j``. ``mode=None`` takes
    the mode the stats were fitted with.
    """
    if mode is None:
        mode = getattr(stats, "opt2_mode", "literal")
    if mode not in OPT2_MODES:
        raise BadParams(f"unknown isolation mode {mode!r}")
    slot_index(emotion)  # validates the name
    sigma = _emo17(stats, "sigma_emo", emotion)
    x = np.asarray(au, dtype=np.float64)
    if mode == "centered":
        x = x - _emo17(stats, "mu_emo", emotion)
    return np.abs(x) / sigma


def origin_distance(iso17):
    """Euclidean norm of the 17 isolation magnitudes."""
    x = np.asarray(iso17, dtype=np.float64)
    return np.sqrt(np.sum(x * x, axis=-1))


def one_hot_tail(emotion, od):
    """Seven-slot tail with ``od`` at the emotion's slot; all zero for neutral."""
    od = np.asarray(od, dtype=np.float64)
    tail = np.zeros(od.shape + (N_SLOTS,))
    k = slot_index(emotion)
    if k is not None:
        tail[..., k] = od
    return tail


def reconstruct(frame, stats, emotion, mode=None):
    """Map AU intensities (an :class:`AUFrame` or an ``(..., 17)`` array) to 41-vectors."""
    au = frame.au if isinstance(frame, AUFrame) else np.asarray(frame, dtype=np.float64)
    u = standardize(au, stats)
    iso = isolate(au, stats, emotion, mode)
    tail = one_hot_tail(emotion, origin_distance(iso))
    return np.concatenate([u, iso, tail], axis=-1)


def decompose(w):
    """Split 41-vectors into the action part (17) and the isolation part (24)."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != N_LES:
        raise ValueError(f"expected {N_LES} coordinates, got {w.shape[-1]}")
    return w[..., :N_AU].copy(), w[..., N_AU:].copy()


def compose(u, v):
    return np.concatenate([np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)], axis=-1)


def tail_slot(v):
    """Index of the nonzero one-hot slot of an isolation vector, or None if the tail is zero.

    Raises ValueError when more than one slot is set.
    """
    tail = np.asarray(v, dtype=np.float64)[N_AU:]
    nz = np.flatnonzero(tail)
    if len(nz) > 1:
        raise ValueError(f"isolation tail has {len(nz)} nonzero slots")
    return int(nz[0]) if len(nz) else None


def slot_emotion(v):
    k = tail_slot(v)
    return NEUTRAL if k is None else SLOT_EMOTIONS[k]


def les_to_json(vectors) -> str:
    arr = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    return json.dumps(arr.tolist() if np.ndim(vectors) > 1 else arr[0].tolist())


def les_from_json(text):
    arr = np.asarray(json.loads(text), dtype=np.float64)
    if arr.shape[-1] != N_LES:
        raise ValueError(f"expected {N_LES} coordinates, got {arr.shape[-1]}")
    return arr


def les_to_csv(vectors, labels=None) -> str:
    """CSV with header ``e1..e41`` (plus an optional leading ``label`` column) for external plotting."""
    arr = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = [f"e{i}" for i in range(1, N_LES + 1)]
    writer.writerow((["label"] if labels is not None else []) + header)
    for i, row in enumerate(arr):
        cells = [fmt(x) for x in row]
        writer.writerow(([labels[i]] if labels is not None else []) + cells)
    return out.getvalue()

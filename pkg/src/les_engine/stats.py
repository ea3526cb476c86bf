"""Dataset statistics, the 22-entry feature table and the outlier matrix."""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Dict, List, Optional, Tuple

import numpy as np

from ._io import dumps, fmt
from .au import AU_NAMES, BASE_LEVELS, EMOTIONS, N_AU, NEUTRAL, SLOT_EMOTIONS, check_emotion
from .errors import (
    BadParams,
    EmotionUnderrepresented,
    EmptyCatalog,
    MissingAnchor,
    StatsIncomplete,
)
from .space import OPT2_MODES, isolate, origin_distance, standardize

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SIGMA_FLOOR = 1e-8

# (emotion, level) keys of the feature table, in report order
FEATURE_KEYS = tuple((e, k) for e in SLOT_EMOTIONS for k in BASE_LEVELS) + ((NEUTRAL, 0),)

Key = Tuple[str, int]


@dataclass
class DatasetStats:
    mu_d: np.ndarray
    sigma_d: np.ndarray
    sigma_emo: Dict[str, np.ndarray]
    mu_emo: Dict[str, np.ndarray] = field(default_factory=dict)
    mean_od: Dict[Key, float] = field(default_factory=dict)
    frame_count: Dict[Key, int] = field(default_factory=dict)
    opt2_mode: str = "literal"
    warnings: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "dataset_stats",
            "au_order": list(AU_NAMES),
            "opt2_mode": self.opt2_mode,
            "mu_d": self.mu_d,
            "sigma_d": self.sigma_d,
            "mu_emo": {e: self.mu_emo[e] for e in EMOTIONS if e in self.mu_emo},
            "sigma_emo": {e: self.sigma_emo[e] for e in EMOTIONS if e in self.sigma_emo},
            "classes": [
                {"emotion": e, "level": k, "mean_od": self.mean_od[(e, k)],
                 "frame_count": self.frame_count.get((e, k), 0)}
                for (e, k) in sorted(self.mean_od, key=_key_order)
            ],
            "warnings": list(self.warnings),
        }
        return dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text) -> "DatasetStats":
        doc = _load_doc(text, "dataset_stats")
        try:
            stats = cls(
                mu_d=_arr17(doc["mu_d"], "mu_d"),
                sigma_d=_arr17(doc["sigma_d"], "sigma_d"),
                sigma_emo={check_emotion(e): _arr17(v, e) for e, v in doc["sigma_emo"].items()},
                mu_emo={check_emotion(e): _arr17(v, e) for e, v in doc.get("mu_emo", {}).items()},
                mean_od={(c["emotion"], int(c["level"])): float(c["mean_od"]) for c in doc["classes"]},
                frame_count={(c["emotion"], int(c["level"])): int(c["frame_count"]) for c in doc["classes"]},
                opt2_mode=doc.get("opt2_mode", "literal"),
                warnings=list(doc.get("warnings", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise StatsIncomplete(f"malformed stats document: {exc}") from None
        if stats.opt2_mode not in OPT2_MODES:
            raise StatsIncomplete(f"unknown opt2_mode {stats.opt2_mode!r}")
        return stats


@dataclass
class FeatureTable:
    uf: Dict[Key, np.ndarray]
    counts: Dict[Key, int] = field(default_factory=dict)

    def __getitem__(self, key):
        try:
            return self.uf[key]
        except KeyError:
            raise MissingAnchor(*key) from None

    def __len__(self):
        return len(self.uf)

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "feature_table",
            "au_order": list(AU_NAMES),
            "entries": [
                {"emotion": e, "level": k, "n": self.counts.get((e, k), 0), "uf": self.uf[(e, k)]}
                for (e, k) in sorted(self.uf, key=_key_order)
            ],
        }
        return dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text) -> "FeatureTable":
        doc = _load_doc(text, "feature_table")
        try:
            uf = {(c["emotion"], int(c["level"])): _arr17(c["uf"], "uf") for c in doc["entries"]}
            counts = {(c["emotion"], int(c["level"])): int(c.get("n", 0)) for c in doc["entries"]}
        except (KeyError, TypeError, ValueError) as exc:
            raise StatsIncomplete(f"malformed feature table: {exc}") from None
        table = cls(uf, counts)
        missing = [k for k in FEATURE_KEYS if k not in uf]
        if missing:
            raise MissingAnchor(*missing[0])
        return table


def _key_order(key):
    emotion, level = key
    return (EMOTIONS.index(emotion), level)


def _arr17(values, what):
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (N_AU,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: expected {N_AU} finite numbers")
    return arr


def _load_doc(text, kind):
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise StatsIncomplete(f"cannot parse {kind} document: {exc}") from None
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise StatsIncomplete(f"not a {kind} document")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise StatsIncomplete(f"unsupported schema_version {doc.get('schema_version')!r}")
    if doc.get("au_order") != list(AU_NAMES):
        raise StatsIncomplete("AU order in document does not match the canonical order")
    return doc


def _guard_sigma(sigma, label, warnings):
    sigma = np.array(sigma, dtype=np.float64)
    bad = sigma < SIGMA_FLOOR
    for i in np.flatnonzero(bad):
        msg = f"degenerate column: {label}[{AU_NAMES[i]}] = {sigma[i]:.3g}, substituted 1.0"
        logger.warning(msg)
        warnings.append(msg)
    sigma[bad] = 1.0
    return sigma


def fit_stats(catalog, opt2_mode="literal") -> DatasetStats:
    """Fit global and per-emotion AU statistics over a catalog.

    Standard deviations are population (divide-by-N) estimates. Columns whose
    std falls under 1e-8 are replaced by 1.0 and reported in ``warnings``.
    Mean origin distances per (emotion, level) are computed from vectors
    reconstructed with the freshly fitted statistics.
    """
    if opt2_mode not in OPT2_MODES:
        raise BadParams(f"unknown opt2_mode {opt2_mode!r}")
    mats = [seq.matrix() for seq in catalog if len(seq)]
    if not mats:
        raise EmptyCatalog("catalog contains no frames")
    X = np.concatenate(mats, axis=0)
    warnings: List[str] = []
    mu_d = X.mean(axis=0)
    sigma_d = _guard_sigma(X.std(axis=0), "sigma_d", warnings)

    by_emotion: Dict[str, List[np.ndarray]] = {}
    for seq in catalog:
        if seq.emotion is not None and len(seq):
            by_emotion.setdefault(seq.emotion, []).append(seq.matrix())
    mu_emo, sigma_emo = {}, {}
    for emotion in EMOTIONS:
        if emotion not in by_emotion:
            continue
        E = np.concatenate(by_emotion[emotion], axis=0)
        if len(E) < 2:
            raise EmotionUnderrepresented(f"emotion {emotion!r} has {len(E)} frame(s); need at least 2")
        mu_emo[emotion] = E.mean(axis=0)
        sigma_emo[emotion] = _guard_sigma(E.std(axis=0), f"sigma_emo[{emotion}]", warnings)

    stats = DatasetStats(mu_d, sigma_d, sigma_emo, mu_emo, opt2_mode=opt2_mode, warnings=warnings)

    by_class: Dict[Key, List[np.ndarray]] = {}
    for seq in catalog:
        if seq.emotion is not None and seq.level is not None and len(seq):
            by_class.setdefault((seq.emotion, seq.level), []).append(seq.matrix())
    for key in sorted(by_class, key=_key_order):
        C = np.concatenate(by_class[key], axis=0)
        od = origin_distance(isolate(C, stats, key[0]))
        stats.mean_od[key] = float(od.mean())
        stats.frame_count[key] = int(len(C))
    return stats


def build_feature_table(catalog, stats) -> FeatureTable:
    """Average standardized action vectors per (emotion, level) label.

    The neutral anchor ``(neutral, 0)`` averages the neutral level-1 frames.
    """
    groups: Dict[Key, List[np.ndarray]] = {}
    for seq in catalog:
        if seq.emotion is None or seq.level is None or not len(seq):
            continue
        key = (NEUTRAL, 0) if seq.emotion == NEUTRAL else (seq.emotion, seq.level)
        groups.setdefault(key, []).append(seq.matrix())
    uf, counts = {}, {}
    for key in FEATURE_KEYS:
        if key not in groups:
            raise MissingAnchor(*key)
        U = standardize(np.concatenate(groups[key], axis=0), stats)
        uf[key] = U.mean(axis=0)
        counts[key] = int(len(U))
    return FeatureTable(uf, counts)


# -- outlier test ------------------------------------------------------------

def z_from_confidence(confidence: float) -> float:
    """Two-sided critical value of the standard normal, e.g. 0.999 -> 3.2905."""
    if not 0.0 < confidence < 1.0:
        raise BadParams(f"confidence must lie in (0, 1), got {confidence}")
    return NormalDist().inv_cdf(1.0 - (1.0 - confidence) / 2.0)


def outlier_threshold(z: float, sigma: float, n: int) -> float:
    """Critical mean deviation ``z * sigma / sqrt(n)``."""
    if not (math.isfinite(z) and math.isfinite(sigma)):
        raise BadParams("z and sigma must be finite")
    if z < 0:
        raise BadParams(f"z must be non-negative, got {z}")
    if sigma <= 0:
        raise BadParams(f"sigma must be positive, got {sigma}")
    if n < 1:
        raise BadParams(f"n must be at least 1, got {n}")
    return z * sigma / math.sqrt(n)


@dataclass
class OutlierCell:
    value: float
    is_outlier: bool


@dataclass
class OutlierMatrix:
    rows: Dict[Key, List[OutlierCell]]
    row_n: Dict[Key, int]
    row_threshold: Dict[Key, float]
    z: float
    sigma: float = 1.0
    n: Optional[int] = None              # set when one n applies to every row
    threshold: Optional[float] = None    # idem
    confidence: Optional[float] = None

    def outlier_count(self):
        return sum(c.is_outlier for cells in self.rows.values() for c in cells)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["emotion", "level", "n", "threshold"] + list(AU_NAMES))
        for key, cells in self.rows.items():
            writer.writerow(
                [key[0], key[1], self.row_n[key], fmt(self.row_threshold[key])]
                + [fmt(c.value) + ("*" if c.is_outlier else "") for c in cells]
            )
        return out.getvalue()

    def summary(self) -> dict:
        return {
            "z": self.z,
            "sigma": self.sigma,
            "confidence": self.confidence,
            "n": self.n,
            "threshold": self.threshold,
            "cells": sum(len(c) for c in self.rows.values()),
            "outliers": self.outlier_count(),
        }


def outlier_matrix(table, z=None, n_override=None, stats=None, sigma=1.0, confidence=None) -> OutlierMatrix:
    """Flag feature-table coordinates whose mean deviates significantly from 0.

    Each row's n is the frame count of its class (from the table or the
    stats) unless ``n_override`` fixes one n for all rows. Either ``z`` or
    ``confidence`` may be given; ``z`` defaults to 3.291.
    """
    if z is None:
        z = z_from_confidence(confidence) if confidence is not None else 3.291
    rows, row_n, row_thr = {}, {}, {}
    for key in FEATURE_KEYS:
        uf = table[key]
        if n_override is not None:
            n = int(n_override)
        else:
            n = table.counts.get(key, 0) if hasattr(table, "counts") else 0
            if not n and stats is not None:
                count_key = (NEUTRAL, 1) if key == (NEUTRAL, 0) else key
                n = stats.frame_count.get(count_key, 0)
            if not n:
                raise StatsIncomplete(f"no frame count for {key}; pass n_override")
        thr = outlier_threshold(z, sigma, n)
        rows[key] = [OutlierCell(float(x), bool(abs(x) > thr)) for x in uf]
        row_n[key] = n
        row_thr[key] = thr
    uniform = n_override is not None
    return OutlierMatrix(
        rows, row_n, row_thr, z=float(z), sigma=float(sigma),
        n=int(n_override) if uniform else None,
        threshold=outlier_threshold(z, sigma, int(n_override)) if uniform else None,
        confidence=confidence,
    )

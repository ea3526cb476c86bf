"""Parsing of OpenFace-style AU intensity CSVs and labeled dataset manifests."""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import (
    BadLabel,
    CatalogFileNotFound,
    EmptyInput,
    MalformedRow,
    MissingColumn,
    UnknownEmotion,
)

logger = logging.getLogger(__name__)

# Canonical AU order. Every 17-vector in the engine uses it.
AU_NUMBERS = (1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 45)
AU_NAMES = tuple(f"AU{n}" for n in AU_NUMBERS)
AU_COLUMNS = tuple(f"AU{n:02d}_r" for n in AU_NUMBERS)
AU_DESCRIPTIONS = (
    "Inner Brow Raiser", "Outer Brow Raiser", "Brow Lowerer", "Upper Lid Raiser",
    "Cheek Raiser", "Lid Tightener", "Nose Wrinkler", "Upper Lip Raiser",
    "Lip Corner Puller", "Dimpler", "Lip Corner Depressor", "Chin Raiser",
    "Lip Stretcher", "Lip Tightener", "Lips Part", "Jaw Drop", "Blink",
)
N_AU = len(AU_NUMBERS)

AU_MIN, AU_MAX = 0.0, 5.0

EMOTIONS = ("angry", "contempt", "disgusted", "fear", "happy", "neutral", "sad", "surprised")
NEUTRAL = "neutral"
# the seven one-hot slots of the isolation tail; neutral has none
SLOT_EMOTIONS = tuple(e for e in EMOTIONS if e != NEUTRAL)
BASE_LEVELS = (1, 2, 3)


def emotion_index(name: str) -> int:
    return EMOTIONS.index(check_emotion(name))


def check_emotion(name, exc=UnknownEmotion) -> str:
    if name not in EMOTIONS:
        raise exc(f"unknown emotion {name!r}; expected one of {', '.join(EMOTIONS)}")
    return name


def slot_index(name: str) -> Optional[int]:
    """Position (0..6) of ``name`` in the isolation tail, None for neutral."""
    check_emotion(name)
    if name == NEUTRAL:
        return None
    return SLOT_EMOTIONS.index(name)


def au_position(au) -> int:
    """Map an AU label (``12``, ``"12"``, ``"AU12"``, ``"AU12_r"``) to its 1-based canonical position."""
    text = str(au).strip().upper()
    if text.endswith("_R"):
        text = text[:-2]
    if text.startswith("AU"):
        text = text[2:]
    try:
        number = int(text)
    except ValueError:
        raise ValueError(f"not an AU label: {au!r}") from None
    if number not in AU_NUMBERS:
        raise ValueError(f"AU{number} is not one of the {N_AU} controllable AUs")
    return AU_NUMBERS.index(number) + 1


@dataclass(frozen=True)
class AUFrame:
    frame_index: int
    au: np.ndarray
    confidence: Optional[float] = None

    def __post_init__(self):
        au = np.array(self.au, dtype=np.float64)
        if au.shape != (N_AU,):
            raise ValueError(f"AU vector must have {N_AU} entries, got shape {au.shape}")
        au.setflags(write=False)
        object.__setattr__(self, "au", au)


@dataclass
class AUSequence:
    frames: List[AUFrame]
    emotion: Optional[str] = None
    level: Optional[int] = None
    subject_id: Optional[str] = None
    source: str = "<memory>"
    clamp_count: int = 0

    def __post_init__(self):
        if self.emotion is not None:
            check_emotion(self.emotion, BadLabel)
            if self.emotion == NEUTRAL and self.level is None:
                self.level = 1
        if self.level is not None:
            if self.emotion is None:
                raise BadLabel("a level label requires an emotion label")
            if isinstance(self.level, bool) or self.level not in BASE_LEVELS:
                raise BadLabel(f"level must be one of {BASE_LEVELS}, got {self.level!r}")
            if self.emotion == NEUTRAL and self.level != 1:
                raise BadLabel("neutral sequences only exist at level 1")
        for prev, cur in zip(self.frames, self.frames[1:]):
            if cur.frame_index <= prev.frame_index:
                raise ValueError(
                    f"frame_index must be strictly increasing ({prev.frame_index} -> {cur.frame_index})"
                )

    def __len__(self):
        return len(self.frames)

    def matrix(self) -> np.ndarray:
        """(n_frames, 17) array of intensities."""
        if not self.frames:
            return np.zeros((0, N_AU))
        return np.stack([f.au for f in self.frames])

    @property
    def frame_indices(self):
        return [f.frame_index for f in self.frames]


def _decode(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        return bytes(data).decode("utf-8-sig")
    return data.lstrip("\ufeff")


def parse_au_csv(data: Union[bytes, str], source: str = "<bytes>") -> AUSequence:
    """Parse one OpenFace-compatible CSV into an :class:`AUSequence`.

    Column order is free and extra columns are ignored. Header names are
    whitespace-stripped since OpenFace pads them with a leading space. If a
    ``frame`` column exists it supplies the frame indices, otherwise rows are
    numbered from 0. Intensities outside [0, 5] are clamped and counted.
    """
    text = _decode(data)
    if not text.strip():
        raise EmptyInput(f"{source}: empty input")
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    names = [h.strip() for h in header]
    index = {name: i for i, name in enumerate(names)}
    for col in AU_COLUMNS:
        if col not in index:
            raise MissingColumn(col)
    au_cols = [index[c] for c in AU_COLUMNS]
    frame_col = index.get("frame")
    conf_col = index.get("confidence")

    frames = []
    clamped = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(names):
            raise MalformedRow(lineno, f"expected {len(names)} fields, got {len(row)}")
        try:
            values = [float(row[i]) for i in au_cols]
        except ValueError as exc:
            raise MalformedRow(lineno, f"non-numeric AU value ({exc})") from None
        if not all(math.isfinite(v) for v in values):
            raise MalformedRow(lineno, "non-finite AU value")
        for v in values:
            if v < AU_MIN or v > AU_MAX:
                clamped += 1
        values = np.clip(values, AU_MIN, AU_MAX)

        if frame_col is not None:
            try:
                fi = float(row[frame_col])
            except ValueError:
                raise MalformedRow(lineno, f"bad frame index {row[frame_col]!r}") from None
            if not fi.is_integer():
                raise MalformedRow(lineno, f"bad frame index {row[frame_col]!r}")
            fi = int(fi)
        else:
            fi = len(frames)
        if frames and fi <= frames[-1].frame_index:
            raise MalformedRow(lineno, f"frame index {fi} is not increasing")

        conf = None
        if conf_col is not None and row[conf_col].strip():
            try:
                conf = float(row[conf_col])
            except ValueError:
                raise MalformedRow(lineno, f"bad confidence {row[conf_col]!r}") from None
            if not math.isfinite(conf):
                raise MalformedRow(lineno, "non-finite confidence")
            conf = min(max(conf, 0.0), 1.0)
        frames.append(AUFrame(fi, values, conf))

    if not frames:
        raise EmptyInput(f"{source}: no data rows")
    if clamped:
        logger.info("%s: clamped %d AU values into [%g, %g]", source, clamped, AU_MIN, AU_MAX)
    return AUSequence(frames, source=source, clamp_count=clamped)


def write_au_csv(seq: Union[AUSequence, Sequence[AUFrame]]) -> bytes:
    """Serialize frames back to CSV (``frame``, optional ``confidence``, 17 AU columns)."""
    frames = seq.frames if isinstance(seq, AUSequence) else list(seq)
    with_conf = any(f.confidence is not None for f in frames)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["frame"] + (["confidence"] if with_conf else []) + list(AU_COLUMNS))
    for f in frames:
        row = [str(f.frame_index)]
        if with_conf:
            row.append("" if f.confidence is None else format(f.confidence, ".17g"))
        row.extend(format(float(v), ".17g") for v in f.au)
        writer.writerow(row)
    return out.getvalue().encode("utf-8")


def _parse_level(value, lineno):
    if value is None:
        return None
    if isinstance(value, bool):
        raise BadLabel(f"manifest line {lineno}: bad level {value!r}")
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if isinstance(value, str) and value.strip().isdigit():
        value = int(value)
    if value not in BASE_LEVELS:
        raise BadLabel(f"manifest line {lineno}: level must be one of {BASE_LEVELS}, got {value!r}")
    return value


def load_catalog(manifest: Union[bytes, str], base_dir=None) -> List[AUSequence]:
    """Load every CSV referenced by a JSON-lines manifest, in manifest order.

    Each line carries ``path`` and optionally ``emotion``, ``level`` and
    ``subject_id``. Relative paths resolve against ``base_dir`` (default: the
    current directory).
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    text = _decode(manifest)
    catalog = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRow(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(entry, dict) or "path" not in entry:
            raise MalformedRow(lineno, "manifest entry needs a 'path'")
        emotion = entry.get("emotion")
        if emotion is not None:
            check_emotion(emotion, BadLabel)
        level = _parse_level(entry.get("level"), lineno)
        if level is not None and emotion is None:
            raise BadLabel(f"manifest line {lineno}: level given without emotion")

        path = Path(entry["path"])
        if not path.is_absolute():
            path = base / path
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise CatalogFileNotFound(str(path)) from None
        seq = parse_au_csv(raw, source=str(entry["path"]))
        sid = entry.get("subject_id")
        catalog.append(
            AUSequence(
                seq.frames,
                emotion=emotion,
                level=level,
                subject_id=None if sid is None else str(sid),
                source=seq.source,
                clamp_count=seq.clamp_count,
            )
        )
    return catalog


def load_catalog_file(path) -> List[AUSequence]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CatalogFileNotFound(str(path)) from None
    return load_catalog(raw, base_dir=path.parent)

"""Emotion injection: move emotion-space vectors toward a user target.

Two kinds of target exist. ``EmotionLevel`` shifts the action part by the
difference between the (interpolated) feature vector of the requested level
and the neutral anchor, then replaces the isolation part by a constructed
target. ``AuBias`` adds a bias to a single action coordinate and leaves the
isolation part alone.
"""

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .au import AU_MAX, AU_MIN, AU_NAMES, BASE_LEVELS, N_AU, NEUTRAL, AUFrame, AUSequence, check_emotion, slot_index
from .errors import BadIndex, BadTarget, MissingAnchor
from .space import N_ISO, compose, decompose, reconstruct, _vec17


@dataclass(frozen=True)
class EmotionLevel:
    emotion: str
    level: float

    def __post_init__(self):
        check_emotion(self.emotion, BadTarget)
        if not (isinstance(self.level, (int, float)) and math.isfinite(self.level)) or self.level < 0:
            raise BadTarget(f"level must be a finite number >= 0, got {self.level!r}")


@dataclass(frozen=True)
class AuBias:
    au_index: int     # 1-based canonical position
    bias: float

    def __post_init__(self):
        _check_index(self.au_index)
        if not math.isfinite(self.bias):
            raise BadTarget(f"bias must be finite, got {self.bias!r}")


InjectionTarget = Union[EmotionLevel, AuBias]


@dataclass
class InjectionResult:
    frame_index: int
    w_prime: np.ndarray
    u_inj: np.ndarray
    v_target: Optional[np.ndarray]
    clamp_report: List[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "frame": self.frame_index,
            "w_prime": self.w_prime.tolist(),
            "u_inj": self.u_inj.tolist(),
            "v_target": None if self.v_target is None else self.v_target.tolist(),
            "clamped": list(self.clamp_report),
        }


def _check_index(au_index):
    if isinstance(au_index, bool) or not isinstance(au_index, (int, np.integer)) or not 1 <= au_index <= N_AU:
        raise BadIndex(f"AU index must be an integer in 1..{N_AU}, got {au_index!r}")


def _check_level(level):
    if not math.isfinite(level) or level < 0:
        raise BadTarget(f"level must be a finite number >= 0, got {level!r}")


def _segment(level):
    """Lower anchor j, upper anchor i and the fractional position for ``level``."""
    if level > BASE_LEVELS[-1]:
        # continue the last segment's direction past the top anchor
        return BASE_LEVELS[-2], BASE_LEVELS[-1], level - BASE_LEVELS[-2]
    j = math.floor(level)
    i = math.ceil(level)
    return j, i, level - j


def anchor_vector(table, emotion, level) -> np.ndarray:
    """Feature vector for a continuous level.

    Integer levels 1..3 return the stored vector itself; fractional levels
    interpolate between neighbouring anchors, with the neutral anchor serving
    as level 0; levels above 3 extrapolate along ``uf_3 - uf_2``.
    """
    check_emotion(emotion, BadTarget)
    _check_level(level)
    neutral = table[(NEUTRAL, 0)]
    if emotion == NEUTRAL:
        return neutral.copy()

    def anchor(k):
        return neutral if k == 0 else table[(emotion, k)]

    if float(level).is_integer() and int(level) in BASE_LEVELS:
        return anchor(int(level)).copy()
    if level > BASE_LEVELS[-1]:
        up, down = anchor(3), anchor(2)
        return (up - down) * (level - 3) + up
    j, i, frac = _segment(level)
    lo = anchor(j)
    if i == j:
        return lo.copy()
    return (anchor(i) - lo) * frac + lo


def inject_emotion(u, table, emotion, level):
    """Returns ``(u_prime, u_inj)``; level 0 is the exact identity."""
    u = np.asarray(u, dtype=np.float64)
    _check_level(level)
    if level == 0:
        return u.copy(), np.zeros(N_AU)
    u_inj = anchor_vector(table, emotion, level) - table[(NEUTRAL, 0)]
    return u + u_inj, u_inj


def inject_au_bias(u, au_index, bias):
    """Add ``bias`` to action coordinate ``au_index`` (1-based canonical position)."""
    _check_index(au_index)
    out = np.array(u, dtype=np.float64)
    out[..., au_index - 1] += bias
    return out


def target_od(stats, emotion, level) -> float:
    """Piecewise-linear mean origin distance over levels (0 -> 0, then the fitted 1, 2, 3)."""
    _check_level(level)
    if emotion == NEUTRAL or level == 0:
        return 0.0
    od = {0: 0.0}
    for k in BASE_LEVELS:
        if (emotion, k) not in stats.mean_od:
            raise MissingAnchor(emotion, k)
        od[k] = float(stats.mean_od[(emotion, k)])
    if float(level).is_integer() and int(level) in BASE_LEVELS:
        return od[int(level)]
    if level > BASE_LEVELS[-1]:
        value = (od[3] - od[2]) * (level - 3) + od[3]
    else:
        j, i, frac = _segment(level)
        value = (od[i] - od[j]) * frac + od[j]
    # a decreasing last segment could extrapolate below zero; od is a magnitude
    return max(value, 0.0)


def build_v_target(stats, emotion, level) -> np.ndarray:
    """Isolation target: zero magnitudes, the emotion's slot carrying the interpolated od."""
    check_emotion(emotion, BadTarget)
    v = np.zeros(N_ISO)
    k = slot_index(emotion)
    if k is not None:
        v[N_AU + k] = target_od(stats, emotion, level)
    return v


def control_for(target, table, stats):
    """Translate a target into an action delta and optional isolation target."""
    if isinstance(target, EmotionLevel):
        if target.level == 0:
            return np.zeros(N_AU), None
        _, u_inj = inject_emotion(np.zeros(N_AU), table, target.emotion, target.level)
        return u_inj, build_v_target(stats, target.emotion, target.level)
    if isinstance(target, AuBias):
        return inject_au_bias(np.zeros(N_AU), target.au_index, target.bias), None
    raise BadTarget(f"unsupported target {target!r}")


def apply_control(seq: AUSequence, stats, u_inj, v_target=None, source_emotion=None):
    """Apply a fixed control to every frame of ``seq``.

    Each frame is reconstructed, its action part shifted by ``u_inj`` and its
    isolation part replaced by ``v_target`` when one is given. Output
    intensities are computed as ``AU + u_inj * sigma_D``, which equals the
    inverse standardization of the shifted action part but leaves untouched
    coordinates bit-identical; they are then clamped to [0, 5].
    """
    emotion = source_emotion or seq.emotion or NEUTRAL
    u_inj = np.asarray(u_inj, dtype=np.float64)
    if u_inj.shape != (N_AU,):
        raise BadTarget(f"u_inj must have {N_AU} entries")
    if v_target is not None:
        v_target = np.asarray(v_target, dtype=np.float64)
        if v_target.shape != (N_ISO,):
            raise BadTarget(f"v_target must have {N_ISO} entries")
    sigma = _vec17(stats, "sigma_d")
    M = seq.matrix()
    U, V = decompose(reconstruct(M, stats, emotion))
    U2 = U + u_inj
    V2 = V if v_target is None else np.broadcast_to(v_target, V.shape)
    raw = M + u_inj * sigma
    clamped = (raw < AU_MIN) | (raw > AU_MAX)
    out_au = np.clip(raw, AU_MIN, AU_MAX)

    frames, results = [], []
    for r, frame in enumerate(seq.frames):
        frames.append(AUFrame(frame.frame_index, out_au[r], frame.confidence))
        results.append(InjectionResult(
            frame.frame_index,
            compose(U2[r], V2[r]),
            u_inj.copy(),
            None if v_target is None else v_target.copy(),
            [AU_NAMES[i] for i in np.flatnonzero(clamped[r])],
        ))
    out = AUSequence(frames, subject_id=seq.subject_id, source=f"{seq.source}#injected",
                     clamp_count=int(clamped.sum()))
    return out, results


def inject_sequence(seq, stats, table, target: InjectionTarget, source_emotion=None):
    """Inject ``target`` into every frame; returns the new sequence and per-frame results."""
    u_inj, v_target = control_for(target, table, stats)
    return apply_control(seq, stats, u_inj, v_target, source_emotion)


def trace_to_jsonl(results) -> str:
    return "".join(json.dumps(r.to_record()) + "\n" for r in results)


def control_from_trace(text):
    """Recover ``(u_inj, v_target)`` from an exported trace, to reuse as a prior control.

    All records of a trace produced by one injection share the same control;
    a trace mixing controls is rejected.
    """
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not records:
        raise BadTarget("prior trace is empty")
    first = records[0]
    for rec in records[1:]:
        if rec["u_inj"] != first["u_inj"] or rec["v_target"] != first["v_target"]:
            raise BadTarget("prior trace does not carry a single consistent control")
    u_inj = np.asarray(first["u_inj"], dtype=np.float64)
    v_target = None if first["v_target"] is None else np.asarray(first["v_target"], dtype=np.float64)
    return u_inj, v_target

"""Seeded synthetic AU corpora covering all eight emotions and three levels.

Each emotion activates a FACS-style prototype set of AUs whose intensity
grows linearly with the level; frames add Gaussian noise and are clamped to
the OpenFace range. Used for fixtures, acceptance runs and demos.
"""

import json
from pathlib import Path

import numpy as np

from .au import AU_NUMBERS, AU_MAX, AU_MIN, BASE_LEVELS, EMOTIONS, N_AU, NEUTRAL, AUFrame, AUSequence, write_au_csv

PROTOTYPES = {
    "angry": (4, 5, 7, 23),
    "contempt": (12, 14),
    "disgusted": (9, 10, 15, 17),
    "fear": (1, 2, 4, 5, 7, 20, 26),
    "happy": (6, 12, 25),
    "neutral": (),
    "sad": (1, 4, 15, 17),
    "surprised": (1, 2, 5, 26),
}


def prototype(emotion):
    vec = np.zeros(N_AU)
    for au in PROTOTYPES[emotion]:
        vec[AU_NUMBERS.index(au)] = 1.0
    return vec


def make_sequence(rng, emotion, level, n_frames, subject_id=None, baseline=0.4, gain=0.9, noise=0.35):
    mean = baseline + gain * level * prototype(emotion)
    X = np.clip(mean + rng.normal(0.0, noise, size=(n_frames, N_AU)), AU_MIN, AU_MAX)
    # blinks: occasional spikes on AU45
    blink = rng.random(n_frames) < 0.08
    X[blink, AU_NUMBERS.index(45)] = np.clip(rng.uniform(1.5, 3.5, size=blink.sum()), AU_MIN, AU_MAX)
    frames = [AUFrame(i + 1, X[i], float(rng.uniform(0.85, 1.0))) for i in range(n_frames)]
    return AUSequence(frames, emotion=emotion, level=level, subject_id=subject_id,
                      source=f"synthetic/{emotion}_{level}_{subject_id}")


def make_corpus(seed=0, n_frames=20, n_subjects=3):
    """One sequence per (subject, emotion, level); neutral only at level 1.

    The default yields 3 * (7 * 3 + 1) * 20 = 1320 frames.
    """
    rng = np.random.default_rng(seed)
    catalog = []
    for s in range(n_subjects):
        sid = f"S{s:02d}"
        for emotion in EMOTIONS:
            levels = (1,) if emotion == NEUTRAL else BASE_LEVELS
            for level in levels:
                catalog.append(make_sequence(rng, emotion, level, n_frames, sid))
    return catalog


def write_corpus(catalog, out_dir):
    """Write one CSV per sequence plus ``manifest.jsonl``; returns the manifest path."""
    out = Path(out_dir)
    (out / "csv").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, seq in enumerate(catalog):
        name = f"csv/{i:04d}_{seq.emotion}_{seq.level}.csv"
        (out / name).write_bytes(write_au_csv(seq))
        entry = {"path": name, "emotion": seq.emotion, "level": seq.level}
        if seq.subject_id is not None:
            entry["subject_id"] = seq.subject_id
        lines.append(json.dumps(entry, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest

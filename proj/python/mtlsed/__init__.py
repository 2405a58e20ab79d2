"""Multitask scene classification and sound event detection."""

import json

from ._core import (
    Error,
    IoError,
    Model,
    event_bce_strong,
    event_frame_scores,
    event_weak_loss,
    gradcheck,
    gradcheck_ops,
    log_mel,
    pool,
    scene_ce,
    scene_scores,
    shape_trace,
)
from ._core import synth_clip as _synth_clip

__all__ = [
    "Error",
    "IoError",
    "Model",
    "event_bce_strong",
    "event_frame_scores",
    "event_weak_loss",
    "gradcheck",
    "gradcheck_ops",
    "log_mel",
    "pool",
    "scene_ce",
    "scene_scores",
    "shape_trace",
    "synth_clip",
]


def synth_clip(index, seed=0, clip_seconds=10.0):
    """Returns (waveform, annotation dict) for one synthetic clip."""
    wave, text = _synth_clip(index, seed, clip_seconds)
    return wave, json.loads(text)

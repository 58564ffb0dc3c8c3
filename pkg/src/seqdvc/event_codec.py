"""Conversion between event timestamps and per-frame binary event vectors.

Frame ``t`` of a video with ``N`` frames and duration ``d`` covers the span
``[t*d/N, (t+1)*d/N)``. An interval switches on every frame it overlaps with
positive length; a zero-length interval switches on the single frame that
contains it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

_SNAP = 1e-9


class NoEvent(ValueError):
    """Raised when an all-zero vector is decoded; callers treat it as a stop."""


@dataclass(frozen=True)
class TimeInterval:
    start: float
    end: float
    duration: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"interval start {self.start} > end {self.end}")
        if self.start < 0 or self.end > self.duration + _SNAP:
            raise ValueError(f"interval [{self.start}, {self.end}] outside [0, {self.duration}]")

    def as_list(self) -> list[float]:
        return [self.start, self.end]


def _frame_coord(t: float, duration: float, n: int) -> float:
    x = t * n / duration
    r = round(x)
    return float(r) if abs(x - r) < _SNAP else x


def encode(interval: TimeInterval, n_frames: int) -> np.ndarray:
    """Binary vector (uint8, length ``n_frames``) of frames covered by ``interval``."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if interval.duration <= 0:
        raise ValueError("video duration must be positive")
    s = _frame_coord(interval.start, interval.duration, n_frames)
    e = _frame_coord(interval.end, interval.duration, n_frames)
    if e > s:
        first = math.floor(s)
        last = math.ceil(e) - 1
    else:
        first = last = math.floor(s)
    first = min(max(first, 0), n_frames - 1)
    last = min(max(last, first), n_frames - 1)
    bits = np.zeros(n_frames, dtype=np.uint8)
    bits[first : last + 1] = 1
    return bits


def decode(bits, duration: float) -> TimeInterval:
    """First one-bit gives the start, last one-bit gives the end; holes are ignored."""
    bits = np.asarray(bits)
    on = np.flatnonzero(bits)
    if on.size == 0:
        raise NoEvent("event vector has no active frame")
    n = bits.shape[-1]
    step = duration / n
    return TimeInterval(float(on[0] * step), float(min((on[-1] + 1) * step, duration)), float(duration))


def frame_span(bits) -> tuple[int, int]:
    """Inclusive (first, last) active frame index."""
    on = np.flatnonzero(np.asarray(bits))
    if on.size == 0:
        raise NoEvent("event vector has no active frame")
    return int(on[0]), int(on[-1])


def sort_and_validate(events: Iterable) -> list[np.ndarray]:
    """Order event vectors by first active frame, then last active frame.

    Duplicates are kept. All-zero vectors are rejected.
    """
    vecs = [np.asarray(e, dtype=np.uint8) for e in events]
    keyed = []
    for i, v in enumerate(vecs):
        try:
            keyed.append((frame_span(v), i, v))
        except NoEvent:
            raise NoEvent(f"event {i} is all-zero") from None
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [v for _, _, v in keyed]

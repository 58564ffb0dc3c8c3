"""Reference event sets for diversity comparisons.

``sliding_window_proposals`` is the dense, redundancy-heavy baseline: a fixed
number of equal windows at evenly spaced starts. ``annotation_like_events``
mimics human annotations, which tile a video with mostly distinct segments
whose boundaries spill slightly into their neighbours.
"""

from __future__ import annotations

import numpy as np


def sliding_window_proposals(duration: float, n: int = 10, window_frac: float = 0.3) -> list[dict]:
    if n < 1 or not 0.0 < window_frac <= 1.0:
        raise ValueError("need n >= 1 and window_frac in (0, 1]")
    length = window_frac * duration
    starts = np.linspace(0.0, duration - length, n)
    return [{"sentence": "", "timestamp": [float(s), float(s + length)]} for s in starts]


def sliding_window_submission(durations: dict, n: int = 10, window_frac: float = 0.3) -> dict:
    return {vid: sliding_window_proposals(d, n, window_frac) for vid, d in sorted(durations.items())}


def annotation_like_events(duration: float, rng, min_events: int = 2, max_events: int = 5, spill: float = 0.2) -> list[dict]:
    """Random partition into k segments; each boundary extends outward by up to
    ``spill`` of its segment length."""
    k = int(rng.integers(min_events, max_events + 1))
    bounds = np.concatenate([[0.0], np.sort(rng.uniform(0.0, duration, k - 1)), [duration]])
    out = []
    for s, e in zip(bounds[:-1], bounds[1:]):
        length = e - s
        s2 = max(0.0, s - spill * length * rng.random())
        e2 = min(duration, e + spill * length * rng.random())
        out.append({"sentence": "", "timestamp": [float(s2), float(e2)]})
    return out


def annotation_like_submission(durations: dict, seed: int = 0, **kw) -> dict:
    rng = np.random.default_rng([seed, 11])
    return {vid: annotation_like_events(d, rng, **kw) for vid, d in sorted(durations.items())}

"""Synthetic untrimmed-video corpora with known event structure.

Each video is a row of ``n_frames`` frames. A handful of activity segments
are packed into it in temporal order, with background frames in between.
A frame's appearance feature is the one-hot of its latent class (activity
or background) pushed through a fixed random projection, plus Gaussian
noise. Captions come from a per-activity template grammar; the ``{order}``
slot says whether the event opens the video and ``{manner}`` reflects the
segment length, so a caption is predictable from the video and the event.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..event_codec import TimeInterval
from .formats import DenseVideoRecord, write_annotations, write_features

ACTIVITIES = [
    ("chopping", "onions"),
    ("stirring", "soup"),
    ("pouring", "water"),
    ("washing", "dishes"),
    ("peeling", "potatoes"),
    ("mixing", "dough"),
    ("frying", "eggs"),
    ("slicing", "bread"),
    ("rinsing", "vegetables"),
    ("grating", "cheese"),
    ("whisking", "cream"),
    ("toasting", "nuts"),
]


def default_grammar(n_activities: int) -> dict[str, list[str]]:
    if n_activities > len(ACTIVITIES):
        raise ValueError(f"default grammar has only {len(ACTIVITIES)} activities")
    return {verb: [f"{{order}} someone is {verb} {obj} {{manner}}"] for verb, obj in ACTIVITIES[:n_activities]}


@dataclass
class SyntheticSpec:
    n_videos: int = 100
    n_frames: int = 32
    n_activities: int = 8
    min_events: int = 1
    max_events: int = 4
    min_event_frames: int = 3
    noise_std: float = 0.5
    appearance_dim: int = 16
    duration_range: tuple[float, float] = (30.0, 90.0)
    overlap: bool = False
    seed: int = 0
    grammar: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.grammar:
            self.grammar = default_grammar(self.n_activities)
        if len(self.grammar) != self.n_activities:
            raise ValueError("grammar must define exactly n_activities activities")
        for act, templates in self.grammar.items():
            if not templates:
                raise ValueError(f"activity {act!r} has no templates")
            for t in templates:
                if act not in t.split():
                    raise ValueError(f"template {t!r} does not name its activity {act!r}")
        if not (1 <= self.min_events <= self.max_events):
            raise ValueError("need 1 <= min_events <= max_events")
        if self.n_frames < 1 or self.n_videos < 1 or self.min_event_frames < 1:
            raise ValueError("sizes must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        lo, hi = self.duration_range
        if not (0 < lo <= hi):
            raise ValueError("bad duration range")
        if not self.overlap and self.max_events * self.min_event_frames > self.n_frames:
            raise ValueError(
                f"cannot pack {self.max_events} events of >= {self.min_event_frames} frames into {self.n_frames} frames"
            )
        if self.n_activities < 2 and self.max_events > 1 and not self.overlap:
            raise ValueError("adjacent events need distinct activities; use >= 2 activities")

    @property
    def activities(self) -> list[str]:
        return list(self.grammar)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration_range"] = list(self.duration_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "duration_range" in d:
            d["duration_range"] = tuple(d["duration_range"])
        return cls(**d)


def manner_for(length_frames: int, n_frames: int) -> str:
    if length_frames * 8 <= n_frames:
        return "quickly"
    if length_frames * 4 >= n_frames:
        return "slowly"
    return "carefully"


def projection_matrix(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 7919])
    proj = rng.standard_normal((spec.n_activities + 1, spec.appearance_dim))
    return (proj / np.linalg.norm(proj, axis=1, keepdims=True)).astype(np.float32)


def _pack_segments(spec: SyntheticSpec, k: int, rng) -> list[tuple[int, int]]:
    n = spec.n_frames
    if spec.overlap:
        segs = []
        for _ in range(k):
            length = int(rng.integers(spec.min_event_frames, n + 1))
            start = int(rng.integers(0, n - length + 1))
            segs.append((start, start + length - 1))
        return sorted(segs)
    free = n - k * spec.min_event_frames
    if free < 0:
        raise ValueError(f"infeasible packing: {k} events in {n} frames")
    shares = rng.multinomial(free, rng.dirichlet(np.ones(2 * k + 1)))
    gaps, extra = shares[: k + 1], shares[k + 1 :]
    segs = []
    pos = int(gaps[0])
    for j in range(k):
        length = spec.min_event_frames + int(extra[j])
        segs.append((pos, pos + length - 1))
        pos += length + int(gaps[j + 1])
    return segs


def generate_video(spec: SyntheticSpec, index: int, proj: np.ndarray) -> DenseVideoRecord:
    rng = np.random.default_rng([spec.seed, index])
    n = spec.n_frames
    k = int(rng.integers(spec.min_events, spec.max_events + 1))
    segs = _pack_segments(spec, k, rng)
    duration = float(np.round(rng.uniform(*spec.duration_range), 3))
    acts = spec.activities
    labels = []
    prev = -1
    for _ in segs:
        choices = [a for a in range(len(acts)) if a != prev]
        a = int(rng.choice(choices))
        labels.append(a)
        prev = a
    classes = np.zeros((n, len(acts) + 1), dtype=np.float32)
    classes[:, len(acts)] = 1.0
    for (s, e), a in zip(segs, labels):
        classes[s : e + 1, len(acts)] = 0.0
        classes[s : e + 1, a] = 1.0
    features = classes @ proj
    if spec.noise_std > 0:
        features = features + rng.normal(0.0, spec.noise_std, features.shape).astype(np.float32)
    step = duration / n
    events, sentences = [], []
    for j, ((s, e), a) in enumerate(zip(segs, labels)):
        events.append(TimeInterval(s * step, min((e + 1) * step, duration), duration))
        templates = spec.grammar[acts[a]]
        t = templates[int(rng.integers(len(templates)))] if len(templates) > 1 else templates[0]
        order = "first" if j == 0 else "then"
        sentences.append(t.format(order=order, manner=manner_for(e - s + 1, n)))
    return DenseVideoRecord(
        video_id=f"v{spec.seed}_{index:05d}",
        duration=duration,
        events=events,
        sentences=sentences,
        features=features.astype(np.float32),
        activities=[acts[a] for a in labels],
    )


def generate_synthetic_corpus(spec: SyntheticSpec) -> list[DenseVideoRecord]:
    proj = projection_matrix(spec)
    return [generate_video(spec, i, proj) for i in range(spec.n_videos)]


def write_dataset(records: list[DenseVideoRecord], out_dir, spec: SyntheticSpec | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"annotations": out / "annotations.json", "features": out / "features.bin"}
    write_annotations(paths["annotations"], records)
    write_features(paths["features"], {r.video_id: r.features for r in records})
    if spec is not None:
        paths["spec"] = out / "synthetic_spec.json"
        paths["spec"].write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    return paths


def split_records(records, n_heldout: int):
    """Last ``n_heldout`` records become the held-out split."""
    if n_heldout >= len(records):
        raise ValueError("held-out split would leave no training data")
    return records[: len(records) - n_heldout], records[len(records) - n_heldout :]

"""Temporal IoU, detection precision/recall and self-tIoU."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

THRESHOLDS = (0.3, 0.5, 0.7, 0.9)


def _bounds(x) -> tuple[float, float]:
    if hasattr(x, "start"):
        return float(x.start), float(x.end)
    if isinstance(x, dict):
        x = x["timestamp"]
    s, e = x
    return float(s), float(e)


def tiou(a, b) -> float:
    """Intersection over union of two intervals (TimeInterval, pair, or prediction dict).

    Two degenerate intervals score 1 when they coincide and 0 otherwise.
    """
    s1, e1 = _bounds(a)
    s2, e2 = _bounds(b)
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    union = (e1 - s1) + (e2 - s2) - inter
    if union <= 0:
        return 1.0 if (s1, e1) == (s2, e2) else 0.0
    return inter / union


def tiou_matrix(a: list, b: list) -> np.ndarray:
    out = np.zeros((len(a), len(b)))
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i, j] = tiou(x, y)
    return out


@dataclass
class DetectionReport:
    recall: dict = field(default_factory=dict)
    precision: dict = field(default_factory=dict)
    avg_recall: float = 0.0
    avg_precision: float = 0.0
    self_tiou: float = 0.0
    events_per_video: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall"] = {str(k): v for k, v in self.recall.items()}
        d["precision"] = {str(k): v for k, v in self.precision.items()}
        return d


def _as_sets(references):
    return [references] if isinstance(references, dict) else list(references)


def _video_pr(preds, gts, thresholds):
    if not gts:
        return None
    m = tiou_matrix(preds, gts)
    rec, prec = [], []
    for t in thresholds:
        hit = m >= t - 1e-12
        rec.append(hit.any(axis=0).mean() if preds else 0.0)
        prec.append(hit.any(axis=1).mean() if preds else 0.0)
    return np.array(rec), np.array(prec)


def detection_pr(predictions: dict, references, thresholds=THRESHOLDS) -> DetectionReport:
    """Any-match recall/precision per threshold, averaged per video then over videos.

    A ground-truth event counts as recalled if any prediction overlaps it at
    or above the threshold; a prediction counts as precise if it overlaps any
    ground-truth event. Several reference sets may be given; each video takes
    the best set per threshold. Videos without predictions score zero.
    """
    ref_sets = _as_sets(references)
    vids = sorted(set().union(*ref_sets))
    extra = set(predictions) - set(vids)
    if extra:
        raise KeyError(f"predictions for unknown videos: {sorted(extra)[:5]}")
    recs, precs = [], []
    for vid in vids:
        preds = predictions.get(vid, [])
        best_r = best_p = None
        for refs in ref_sets:
            got = _video_pr(preds, refs.get(vid, []), thresholds)
            if got is None:
                continue
            r, p = got
            best_r = r if best_r is None else np.maximum(best_r, r)
            best_p = p if best_p is None else np.maximum(best_p, p)
        recs.append(best_r)
        precs.append(best_p)
    recall = np.mean(recs, axis=0) * 100 if recs else np.zeros(len(thresholds))
    precision = np.mean(precs, axis=0) * 100 if precs else np.zeros(len(thresholds))
    return DetectionReport(
        recall={t: float(v) for t, v in zip(thresholds, recall)},
        precision={t: float(v) for t, v in zip(thresholds, precision)},
        avg_recall=float(np.mean(recall)),
        avg_precision=float(np.mean(precision)),
        self_tiou=self_tiou({v: predictions.get(v, []) for v in vids}),
        events_per_video=float(np.mean([len(predictions.get(v, [])) for v in vids])) if vids else 0.0,
    )


def video_self_tiou(events: list) -> float:
    if len(events) < 2:
        return 0.0
    # sort first so the float sum does not depend on input order
    events = sorted(events, key=lambda e: (float(e["timestamp"][0]), float(e["timestamp"][1])))
    return float(np.mean([tiou(a, b) for a, b in combinations(events, 2)]))


def self_tiou(events_per_video: dict) -> float:
    """Mean pairwise tIoU within each video (0 below two events), averaged over videos."""
    if not events_per_video:
        return 0.0
    return float(np.mean([video_self_tiou(events_per_video[v]) for v in sorted(events_per_video)]))

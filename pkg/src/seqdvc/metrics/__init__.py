"""Evaluation: detection, captioning at tIoU, SODA, and the combined report."""

from __future__ import annotations

import json

from .captioning import bleu4, captioning_at_tiou, cider, corpus_caption_scores, meteor_lite
from .detection import THRESHOLDS, DetectionReport, detection_pr, self_tiou, tiou
from .soda import SodaReport, exhaustive_max, order_preserving_max, soda

EVAL_FORMAT_VERSION = 1


def evaluate(submission: dict, references, thresholds=THRESHOLDS, caption_tiou: float = 0.9,
             inner_metric: str = "meteor_lite") -> dict:
    """All metrics as one JSON-ready dict (detection, captioning, both SODA modes)."""
    det = detection_pr(submission, references, thresholds)
    return {
        "format_version": EVAL_FORMAT_VERSION,
        "config": {"thresholds": list(thresholds), "caption_tiou": caption_tiou, "inner_metric": inner_metric},
        "detection": det.to_dict(),
        "captioning": captioning_at_tiou(submission, references, caption_tiou),
        "soda_old": soda(submission, references, inner_metric, "old").to_dict(),
        "soda_mr": soda(submission, references, inner_metric, "mr").to_dict(),
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


__all__ = [
    "THRESHOLDS", "DetectionReport", "SodaReport", "bleu4", "captioning_at_tiou", "cider",
    "corpus_caption_scores", "detection_pr", "dumps_report", "evaluate", "exhaustive_max",
    "meteor_lite", "order_preserving_max", "self_tiou", "soda", "tiou",
]

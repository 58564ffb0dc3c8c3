"""Adverse submission perturbations and the metric audit built on them.

increase  copies a video's first event (and caption) with probability p_increase
reduce    drops each later event independently with probability p_reduce
exchange  increase, then reduce on the result
extreme   keeps only the first event
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .metrics import captioning_at_tiou, detection_pr, soda

OPERATIONS = ("increase", "reduce", "exchange", "extreme")
COLUMNS = ("avg_recall", "avg_precision", "bleu4", "cider", "meteor_lite", "soda_old", "soda_mr")
HEADERS = {
    "avg_recall": "Avg Recall",
    "avg_precision": "Avg Precision",
    "bleu4": "BLEU@4",
    "cider": "CIDEr",
    "meteor_lite": "METEOR-lite",
    "soda_old": "SODA_old",
    "soda_mr": "SODA_mr",
}

_INCREASE, _REDUCE = 0, 1


@dataclass
class PerturbConfig:
    operation: str = "extreme"
    p_increase: float = 0.4
    p_reduce: float = 0.15
    seeds: list = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if self.operation not in OPERATIONS + ("original",):
            raise ValueError(f"unknown operation {self.operation!r}")
        for name in ("p_increase", "p_reduce"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.seeds:
            raise ValueError("at least one seed is required")


def _sorted(events):
    return sorted(events, key=lambda e: (float(e["timestamp"][0]), float(e["timestamp"][1])))


def _increase(events, rng, p):
    if rng.random() < p:
        return [dict(events[0])] + events
    return events


def _reduce(events, rng, p):
    # the first event always stays; every later one faces its own trial
    keep = [events[0]]
    draws = rng.random(len(events) - 1)
    keep += [e for e, u in zip(events[1:], draws) if u >= p]
    return keep


def perturb(submission: dict, operation: str, seed: int, p_increase: float = 0.4, p_reduce: float = 0.15) -> dict:
    """Apply one operation to every video.

    Random draws come from per-video generators keyed on (seed, video index,
    stage), so exchange makes exactly the same copy decisions as increase
    under the same seed. Empty videos pass through unchanged.
    """
    if operation not in OPERATIONS + ("original",):
        raise ValueError(f"unknown operation {operation!r}")
    if not submission:
        raise ValueError("empty submission")
    out = {}
    for idx, vid in enumerate(sorted(submission)):
        events = [dict(e) for e in _sorted(submission[vid])]
        if not events or operation == "original":
            out[vid] = events
            continue
        if operation == "extreme":
            out[vid] = events[:1]
            continue
        if operation in ("increase", "exchange"):
            events = _increase(events, np.random.default_rng([seed, idx, _INCREASE]), p_increase)
        if operation in ("reduce", "exchange"):
            events = _reduce(events, np.random.default_rng([seed, idx, _REDUCE]), p_reduce)
        out[vid] = events
    return out


def score_row(submission: dict, references: list, caption_tiou: float = 0.9, inner_metric: str = "meteor_lite") -> dict:
    det = detection_pr(submission, references)
    cap = captioning_at_tiou(submission, references, caption_tiou)
    return {
        "avg_recall": det.avg_recall,
        "avg_precision": det.avg_precision,
        "bleu4": cap["bleu4"],
        "cider": cap["cider"],
        "meteor_lite": cap["meteor_lite"],
        "soda_old": soda(submission, references, inner_metric, "old").f1,
        "soda_mr": soda(submission, references, inner_metric, "mr").f1,
    }


@dataclass
class AuditReport:
    seeds: list
    p_increase: float
    p_reduce: float
    rows: dict  # operation -> {"mean": {...}, "per_seed": {seed: {...}}}

    def mean(self, operation: str, column: str) -> float:
        return self.rows[operation]["mean"][column]

    def to_dict(self) -> dict:
        return {"format_version": 1, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Operation"] + [HEADERS[c] for c in COLUMNS])
        for op, row in self.rows.items():
            w.writerow([op.capitalize()] + [f"{row['mean'][c]:.2f}" for c in COLUMNS])
        return buf.getvalue()


def audit(submission: dict, references, cfg: PerturbConfig | None = None, operations=OPERATIONS, **score_kw) -> AuditReport:
    """Score the original submission and each operation, averaging over seeds."""
    cfg = cfg or PerturbConfig()
    refs = [references] if isinstance(references, dict) else list(references)
    base = score_row(submission, refs, **score_kw)
    rows = {"original": {"mean": base, "per_seed": {str(s): base for s in cfg.seeds}}}
    for op in operations:
        per_seed = {}
        for s in cfg.seeds:
            perturbed = perturb(submission, op, s, cfg.p_increase, cfg.p_reduce)
            per_seed[str(s)] = score_row(perturbed, refs, **score_kw)
        mean = {c: float(np.mean([per_seed[str(s)][c] for s in cfg.seeds])) for c in COLUMNS}
        rows[op] = {"mean": mean, "per_seed": per_seed}
    return AuditReport(list(cfg.seeds), cfg.p_increase, cfg.p_reduce, rows)


# --- synthetic audit inputs ---------------------------------------------------------

_FILLER = ("person", "thing", "somewhere", "around", "again", "over", "there", "while")


def _corrupt_sentence(sentence: str, rng, frac: float) -> str:
    words = sentence.split()
    n = max(1, int(round(frac * len(words))))
    for i in rng.choice(len(words), size=min(n, len(words)), replace=False):
        words[i] = _FILLER[int(rng.integers(len(_FILLER)))]
    return " ".join(words)


def _jitter(ts, duration, rng, amount):
    s, e = ts
    span = e - s
    s2 = min(max(0.0, s + rng.uniform(-amount, amount) * span), duration)
    e2 = min(max(s2, e + rng.uniform(-amount, amount) * span), duration)
    return [round(s2, 4), round(e2, 4)]


def audit_inputs(references: dict, seed: int = 0, corrupt_frac: float = 0.5, jitter: float = 0.02) -> tuple[dict, list]:
    """A submission whose first event per video is its best, plus two reference sets.

    The first predicted event copies the first reference event exactly. Later
    events keep their reference interval up to a small jitter but have about
    ``corrupt_frac`` of their words replaced. The second reference set is the
    first with jittered boundaries.
    """
    rng = np.random.default_rng([seed, 9])
    sub, second = {}, {}
    for vid in sorted(references):
        gts = _sorted(references[vid])
        duration = max(float(g["timestamp"][1]) for g in gts) if gts else 0.0
        preds = []
        for k, g in enumerate(gts):
            if k == 0:
                preds.append({"sentence": g["sentence"], "timestamp": list(g["timestamp"])})
            else:
                preds.append(
                    {
                        "sentence": _corrupt_sentence(g["sentence"], rng, corrupt_frac),
                        "timestamp": _jitter(g["timestamp"], duration, rng, jitter),
                    }
                )
        sub[vid] = preds
        second[vid] = [{"sentence": g["sentence"], "timestamp": _jitter(g["timestamp"], duration, rng, jitter)} for g in gts]
    return sub, [references, second]

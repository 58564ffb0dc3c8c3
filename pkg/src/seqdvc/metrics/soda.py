"""SODA: order-preserving optimal matching between generated and reference events.

Each (generated, reference) pair scores inner(sentences) x tIoU. A dynamic
program over the |G| x |R| grid finds the one-to-one matching that keeps
temporal order on both sides and maximises the summed pair score.
Precision divides that sum by |G| and recall by |R|.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import combinations, permutations

import numpy as np

from .captioning import CiderScorer, meteor_lite
from .detection import tiou

INNER_METRICS = ("meteor_lite", "cider")
MODES = ("old", "mr")


def order_preserving_max(scores: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Maximum-weight order-preserving matching and its (i, j) pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    n, m = scores.shape
    table = np.zeros((n + 1, m + 1))
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            table[i, j] = max(table[i - 1, j], table[i, j - 1], table[i - 1, j - 1] + scores[i - 1, j - 1])
    pairs = []
    i, j = n, m
    while i > 0 and j > 0:
        if table[i, j] == table[i - 1, j]:
            i -= 1
        elif table[i, j] == table[i, j - 1]:
            j -= 1
        else:
            pairs.append((i - 1, j - 1))
            i -= 1
            j -= 1
    return float(table[n, m]), pairs[::-1]


def exhaustive_max(scores: np.ndarray) -> float:
    """Same optimum by enumerating every injective assignment and keeping the
    monotone ones. Exponential; meant as an oracle for tiny grids."""
    scores = np.asarray(scores, dtype=np.float64)
    n, m = scores.shape
    best = 0.0
    for k in range(1, min(n, m) + 1):
        for rows in combinations(range(n), k):
            for cols in permutations(range(m), k):
                if list(cols) != sorted(cols):
                    continue
                best = max(best, float(sum(scores[r, c] for r, c in zip(rows, cols))))
    return best


@dataclass
class SodaReport:
    """Percentages; ``per_video`` holds (precision, recall, f1) fractions."""

    mode: str
    inner_metric: str
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    per_video: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _sorted(events):
    return sorted(events, key=lambda e: (float(e["timestamp"][0]), float(e["timestamp"][1])))


def _unique(events):
    seen, out = set(), []
    for e in events:
        key = (float(e["timestamp"][0]), float(e["timestamp"][1]), e["sentence"])
        if key not in seen:
            seen.add(key)
            out.append(e)
    return out


class _PairScorer:
    def __init__(self, inner: str, ref_sets):
        if inner not in INNER_METRICS:
            raise ValueError(f"unknown inner metric {inner!r}")
        self.inner = inner
        self.cider = None
        if inner == "cider":
            corpus = [[e["sentence"]] for refs in ref_sets for vid in sorted(refs) for e in refs[vid]]
            self.cider = CiderScorer(corpus)
        self.cache = {}

    def sentence(self, cand, ref):
        key = (cand, ref)
        if key not in self.cache:
            if self.cider is not None:
                self.cache[key] = self.cider.score(cand, [ref])
            else:
                self.cache[key] = meteor_lite(cand, [ref])
        return self.cache[key]

    def __call__(self, g, r):
        t = tiou(g, r)
        return 0.0 if t <= 0 else self.sentence(g["sentence"], r["sentence"]) * t

    def matrix(self, gen, refs):
        return np.array([[self(g, r) for r in refs] for g in gen]).reshape(len(gen), len(refs))


def _video_old(gen, n_gen, ref_lists, scorer):
    ps, rs = [], []
    for refs in ref_lists:
        total, _ = order_preserving_max(scorer.matrix(gen, refs))
        ps.append(total / n_gen)
        rs.append(total / len(refs))
    p, r = float(np.mean(ps)), float(np.mean(rs))
    return p, r, _f1(p, r)


def _video_mr(gen, n_gen, ref_lists, scorer):
    best = 0.0
    for k, axis in enumerate(ref_lists):
        base = scorer.matrix(gen, axis)
        for k2, other in enumerate(ref_lists):
            if k2 == k:
                continue
            # the event of the other set that best overlaps each axis event stands in for it
            stand_in = [other[int(np.argmax([tiou(r, o) for o in other]))] for r in axis]
            base = np.maximum(base, scorer.matrix(gen, stand_in))
        best = max(best, order_preserving_max(base)[0])
    p = best / n_gen
    r = best / float(np.mean([len(x) for x in ref_lists]))
    return p, r, _f1(p, r)


def soda(submission: dict, references, inner_metric: str = "meteor_lite", mode: str = "old") -> SodaReport:
    """Corpus SODA over every video that has at least one reference event.

    ``references`` is one reference dict or a list of them. Exact duplicates
    among a video's generated events (same interval and sentence) enter the
    matching once but still count in |G|, so repeating an event can only
    lower the score. Videos with no generated events score 0.

    mode="old" scores each reference set on its own and averages precision
    and recall over sets. mode="mr" lets every pair take the best of the
    reference event and its closest counterpart in each other set, keeps the
    best matching over sets, and divides by the mean reference count.
    """
    if mode not in MODES:
        raise ValueError(f"unknown SODA mode {mode!r}")
    ref_sets = [references] if isinstance(references, dict) else list(references)
    vids = sorted(set().union(*ref_sets))
    extra = set(submission) - set(vids)
    if extra:
        raise KeyError(f"submission has unknown videos: {sorted(extra)[:5]}")
    scorer = _PairScorer(inner_metric, ref_sets)
    per_video = {}
    for vid in vids:
        ref_lists = [_sorted(refs[vid]) for refs in ref_sets if refs.get(vid)]
        if not ref_lists:
            continue
        gen_all = submission.get(vid, [])
        if not gen_all:
            per_video[vid] = (0.0, 0.0, 0.0)
            continue
        gen = _unique(_sorted(gen_all))
        fn = _video_old if mode == "old" else _video_mr
        per_video[vid] = fn(gen, len(gen_all), ref_lists, scorer)
    if not per_video:
        return SodaReport(mode, inner_metric)
    arr = np.array([per_video[v] for v in sorted(per_video)])
    p, r, f = (arr.mean(axis=0) * 100).tolist()
    return SodaReport(mode, inner_metric, p, r, f, {v: list(x) for v, x in per_video.items()})

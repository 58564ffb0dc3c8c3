"""Sentence-level BLEU@4, CIDEr and METEOR-lite, and captioning scored at a tIoU.

METEOR-lite is a resource-free stand-in for METEOR: exact unigram matches
only (no stemming, synonyms or paraphrases), so its numbers are not
comparable with the official METEOR.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from ..data.tokenizer import tokenize
from .detection import tiou


def caption_tokens(sentence) -> list[str]:
    if isinstance(sentence, (list, tuple)):
        return list(sentence)
    return [t for t in tokenize(sentence) if t.isalnum()]


def _ref_list(references) -> list:
    return [references] if isinstance(references, str) else list(references)


def ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate, references) -> float:
    """BLEU with uniform 1-4-gram weights and a brevity penalty.

    An order whose clipped match count is zero uses (0 + 1) / (total + 1)
    instead of zero.
    """
    cand = caption_tokens(candidate)
    refs = [caption_tokens(r) for r in _ref_list(references)]
    refs = [r for r in refs if r]
    if not cand or not refs:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        counts = ngrams(cand, n)
        total = sum(counts.values())
        max_ref = Counter()
        for r in refs:
            for g, c in ngrams(r, n).items():
                max_ref[g] = max(max_ref[g], c)
        match = sum(min(c, max_ref[g]) for g, c in counts.items())
        p = match / total if match else (match + 1) / (total + 1)
        log_p += math.log(p) / 4
    c = len(cand)
    r = min((abs(len(x) - c), len(x)) for x in refs)[1]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_p)


class CiderScorer:
    """CIDEr over 1-4-grams with document frequencies from a reference corpus.

    Each corpus entry is the list of reference sentences for one item; a
    n-gram's document frequency is the number of entries mentioning it.
    Scores carry the conventional factor of 10.
    """

    def __init__(self, corpus: list[list], n: int = 4):
        self.n = n
        self.df = Counter()
        for refs in corpus:
            seen = set()
            for r in refs:
                toks = caption_tokens(r)
                for k in range(1, n + 1):
                    seen.update(ngrams(toks, k))
            self.df.update(seen)
        self.log_docs = math.log(float(max(len(corpus), 1)))

    def _vec(self, tokens):
        vecs, norms = [], []
        for k in range(1, self.n + 1):
            v = {g: tf * (self.log_docs - math.log(max(1.0, self.df[g]))) for g, tf in ngrams(tokens, k).items()}
            vecs.append(v)
            norms.append(math.sqrt(sum(x * x for x in v.values())))
        return vecs, norms

    def score(self, candidate, references) -> float:
        refs = [caption_tokens(r) for r in _ref_list(references)]
        if not refs:
            return 0.0
        vc, nc = self._vec(caption_tokens(candidate))
        total = 0.0
        for r in refs:
            vr, nr = self._vec(r)
            sims = []
            for k in range(self.n):
                dot = sum(val * vr[k].get(g, 0.0) for g, val in vc[k].items())
                sims.append(dot / (nc[k] * nr[k]) if nc[k] and nr[k] else 0.0)
            total += float(np.mean(sims))
        return total / len(refs) * 10.0


def cider(candidate, references, corpus=None) -> float:
    """CIDEr of one candidate; ``corpus`` (list of reference lists) sets the df."""
    references = _ref_list(references)
    return CiderScorer(corpus if corpus is not None else [references]).score(candidate, references)


def _align(cand, ref):
    used = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(cand):
        for j, r in enumerate(ref):
            if not used[j] and r == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def _meteor_one(cand, ref, alpha, beta, gamma):
    if not cand or not ref:
        return 0.0
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    chunks = 1 + sum(1 for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]) if not (i1 == i0 + 1 and j1 == j0 + 1))
    frag = (chunks - 1) / (m - 1) if m > 1 else 0.0
    return fmean * (1 - gamma * frag**beta)


def meteor_lite(candidate, references, alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5) -> float:
    """Unigram F-mean (recall-weighted by ``alpha``) times a fragmentation penalty.

    Candidate tokens align greedily to the earliest unused identical
    reference token. Fragmentation is (chunks - 1) / (matches - 1), so a
    single contiguous run costs nothing. Best score over references.
    """
    cand = caption_tokens(candidate)
    return max((_meteor_one(cand, caption_tokens(r), alpha, beta, gamma) for r in _ref_list(references)), default=0.0)


CAPTION_METRICS = ("bleu4", "meteor_lite", "cider")


def corpus_caption_scores(items: dict) -> dict:
    """Average sentence scores per video, then over videos.

    ``items``: video id -> list of (candidate, references); an entry with no
    references scores 0. CIDEr df comes from all non-empty reference lists.
    Values are percentages (CIDEr x 100 on top of its x 10 scale).
    """
    corpus = [refs for vid in sorted(items) for _, refs in items[vid] if refs]
    scorer = CiderScorer(corpus)
    per_video = {m: [] for m in CAPTION_METRICS}
    for vid in sorted(items):
        rows = items[vid]
        if not rows:
            for m in CAPTION_METRICS:
                per_video[m].append(0.0)
            continue
        b = [bleu4(c, refs) if refs else 0.0 for c, refs in rows]
        me = [meteor_lite(c, refs) if refs else 0.0 for c, refs in rows]
        ci = [scorer.score(c, refs) if refs else 0.0 for c, refs in rows]
        per_video["bleu4"].append(np.mean(b))
        per_video["meteor_lite"].append(np.mean(me))
        per_video["cider"].append(np.mean(ci))
    return {m: float(np.mean(v)) * 100 if v else 0.0 for m, v in per_video.items()}


def captioning_at_tiou(submission: dict, references, threshold: float = 0.9) -> dict:
    """Score every predicted caption against all reference sentences whose event
    overlaps it at tIoU >= ``threshold``.

    Predictions without a qualifying reference score 0, and extra or
    redundant predictions are not penalised beyond that.
    """
    ref_sets = [references] if isinstance(references, dict) else list(references)
    vids = sorted(set().union(*ref_sets))
    items = {}
    for vid in vids:
        gts = [g for refs in ref_sets for g in refs.get(vid, [])]
        rows = []
        for p in submission.get(vid, []):
            qual = [g["sentence"] for g in gts if tiou(p, g) >= threshold - 1e-12]
            rows.append((p["sentence"], qual))
        items[vid] = rows
    return corpus_caption_scores(items)

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqdvc.metrics import (
    bleu4,
    captioning_at_tiou,
    cider,
    corpus_caption_scores,
    detection_pr,
    evaluate,
    exhaustive_max,
    meteor_lite,
    order_preserving_max,
    self_tiou,
    soda,
    tiou,
)
from seqdvc.metrics.captioning import CiderScorer


def ev(s, e, sent=""):
    return {"timestamp": [float(s), float(e)], "sentence": sent}


# --- tIoU and detection ---------------------------------------------------------

def test_tiou_examples():
    assert tiou((0, 2), (0, 2)) == 1.0
    assert tiou((0, 1), (2, 3)) == 0.0
    assert tiou((0, 2), (1, 3)) == pytest.approx(1 / 3)
    assert tiou((1, 1), (1, 1)) == 1.0
    assert tiou((1, 1), (2, 2)) == 0.0


def test_detection_examples():
    refs = {"v": [ev(0, 2), ev(3, 5)], "w": [ev(1, 4)]}
    rep = detection_pr(refs, refs)
    assert rep.avg_recall == 100 and rep.avg_precision == 100
    assert all(v == 100 for v in rep.recall.values())
    empty = detection_pr({}, refs)
    assert empty.avg_recall == 0 and empty.avg_precision == 0
    one = detection_pr({"v": [ev(0, 2)]}, {"v": refs["v"]})
    assert all(v == 50 for v in one.recall.values()) and all(v == 100 for v in one.precision.values())
    with pytest.raises(KeyError):
        detection_pr({"zzz": []}, refs)


def test_detection_threshold_boundaries_and_averages():
    refs = {"v": [ev(0, 10)]}
    rep = detection_pr({"v": [ev(0, 5)]}, refs)  # tIoU 0.5 counts at 0.3 and 0.5
    assert rep.recall == {0.3: 100.0, 0.5: 100.0, 0.7: 0.0, 0.9: 0.0}
    assert rep.avg_recall == pytest.approx(np.mean(list(rep.recall.values())))


def test_detection_takes_best_reference_set():
    a = {"v": [ev(0, 2)]}
    b = {"v": [ev(5, 7)]}
    rep = detection_pr({"v": [ev(5, 7)]}, [a, b])
    assert rep.avg_recall == 100


interval = st.tuples(st.floats(0, 50), st.floats(0, 50)).map(lambda t: ev(min(t), max(t)))


@given(st.lists(interval, max_size=6), st.lists(interval, min_size=1, max_size=5), interval, st.randoms())
def test_detection_order_invariant_and_monotone_recall(preds, gts, extra, r):
    refs = {"v": gts}
    base = detection_pr({"v": preds}, refs)
    shuffled = list(preds)
    r.shuffle(shuffled)
    assert detection_pr({"v": shuffled}, refs).to_dict() == base.to_dict()
    more = detection_pr({"v": preds + [extra]}, refs)
    assert all(more.recall[t] >= base.recall[t] for t in base.recall)
    assert all(0 <= x <= 100 for x in list(base.recall.values()) + list(base.precision.values()))


def test_self_tiou():
    assert self_tiou({"v": [ev(0, 4)] * 3}) == 1.0
    assert self_tiou({"v": [ev(0, 1), ev(2, 3), ev(4, 5)]}) == 0.0
    assert self_tiou({"v": [ev(0, 1)], "w": [ev(0, 2), ev(1, 3)]}) == pytest.approx((0 + 1 / 3) / 2)


# --- sentence metrics: independent formula oracles ---------------------------------

def _words(s):
    return [w for w in s.lower().replace(",", " ").replace(".", " ").split()]


def oracle_bleu(cand, refs):
    c = _words(cand)
    rs = [_words(r) for r in refs]
    logs = []
    for n in range(1, 5):
        grams = [tuple(c[i : i + n]) for i in range(len(c) - n + 1)]
        hits = 0
        for g in set(grams):
            clip = max(sum(1 for i in range(len(r) - n + 1) if tuple(r[i : i + n]) == g) for r in rs)
            hits += min(grams.count(g), clip)
        logs.append(math.log(hits / len(grams) if hits else 1 / (len(grams) + 1)))
    closest = sorted(rs, key=lambda r: (abs(len(r) - len(c)), len(r)))[0]
    bp = 1.0 if len(c) > len(closest) else math.exp(1 - len(closest) / len(c))
    return bp * math.exp(sum(logs) / 4)


def oracle_meteor(cand, ref):
    c, r = _words(cand), _words(ref)
    taken = set()
    align = []
    for i, w in enumerate(c):
        j = next((j for j, x in enumerate(r) if x == w and j not in taken), None)
        if j is not None:
            taken.add(j)
            align.append((i, j))
    m = len(align)
    if not m:
        return 0.0
    p, rec = m / len(c), m / len(r)
    f = 10 * p * rec / (rec + 9 * p)
    chunks = 1
    for (a, b), (x, y) in zip(align, align[1:]):
        if (x, y) != (a + 1, b + 1):
            chunks += 1
    frag = 0.0 if m == 1 else (chunks - 1) / (m - 1)
    return f * (1 - 0.5 * frag**3)


def oracle_cider(cand, refs, docs):
    """Term vectors as numpy arrays over an explicit n-gram index."""
    def grams(ws, n):
        return [tuple(ws[i : i + n]) for i in range(len(ws) - n + 1)]

    out = 0.0
    c = _words(cand)
    for r in refs:
        rw = _words(r)
        sims = []
        for n in range(1, 5):
            index = sorted(set(grams(c, n)) | set(grams(rw, n)))
            df = np.array([sum(1 for d in docs if any(g in grams(_words(s), n) for s in d)) for g in index], float)
            idf = math.log(len(docs)) - np.log(np.maximum(df, 1))
            vc = np.array([grams(c, n).count(g) for g in index]) * idf
            vr = np.array([grams(rw, n).count(g) for g in index]) * idf
            den = np.linalg.norm(vc) * np.linalg.norm(vr)
            sims.append(float(vc @ vr / den) if den else 0.0)
        out += np.mean(sims)
    return 10 * out / len(refs)


PAIRS = [
    ("a man is riding a horse on the beach", ["a man rides a horse along the beach", "someone riding a horse"]),
    ("the cat sat on the mat", ["the cat is sitting on the mat"]),
    ("two dogs play with a red ball in the park", ["a dog plays with a ball", "dogs playing in a park with a red ball"]),
]


@pytest.mark.parametrize("cand, refs", PAIRS)
def test_bleu_matches_oracle(cand, refs):
    assert bleu4(cand, refs) == pytest.approx(oracle_bleu(cand, refs), abs=1e-6)


@pytest.mark.parametrize("cand, refs", PAIRS)
def test_meteor_lite_matches_oracle(cand, refs):
    assert meteor_lite(cand, refs) == pytest.approx(max(oracle_meteor(cand, r) for r in refs), abs=1e-6)


def test_cider_matches_oracle():
    docs = [refs for _, refs in PAIRS]
    scorer = CiderScorer(docs)
    for cand, refs in PAIRS:
        assert scorer.score(cand, refs) == pytest.approx(oracle_cider(cand, refs, docs), abs=1e-6)
    assert cider(PAIRS[0][0], PAIRS[0][1], corpus=docs) == pytest.approx(scorer.score(*PAIRS[0]))


def test_sentence_metric_edge_cases():
    s = "a person slices a tomato carefully"
    assert bleu4(s, [s]) == pytest.approx(1.0)
    assert meteor_lite(s, [s]) == pytest.approx(1.0)
    assert meteor_lite("dog barks", ["cat meows"]) == 0.0
    assert bleu4("", [s]) == 0.0 and meteor_lite("", [s]) == 0.0
    assert meteor_lite("a b c", ["c b a"]) == pytest.approx(0.5)


def test_captioning_hand_case():
    refs = {
        "v": [ev(0, 10, "the dog runs"), ev(20, 30, "a cat sleeps")],
        "w": [ev(0, 5, "birds fly south")],
    }
    sub = {
        "v": [ev(0, 10, "the dog runs"), ev(40, 50, "the dog runs")],  # second has no qualifying reference
        "w": [ev(0, 5, "birds fly north")],
    }
    got = captioning_at_tiou(sub, refs)
    m_w = oracle_meteor("birds fly north", "birds fly south")
    assert got["meteor_lite"] == pytest.approx(100 * ((1.0 + 0.0) / 2 + m_w) / 2)
    b_w = oracle_bleu("birds fly north", ["birds fly south"])
    b_v = oracle_bleu("the dog runs", ["the dog runs"])
    assert got["bleu4"] == pytest.approx(100 * ((b_v + 0) / 2 + b_w) / 2)


def test_perfect_captioning_and_redundancy_is_rewarded():
    refs = {"v": [ev(0, 10, "the dog runs"), ev(20, 30, "a cat sleeps")]}
    top = captioning_at_tiou(refs, refs)
    assert top["bleu4"] == pytest.approx(100) and top["meteor_lite"] == pytest.approx(100)
    weak = {"v": [ev(0, 10, "the dog runs"), ev(20, 30, "a dog runs")]}
    dup = {"v": weak["v"] + [weak["v"][0]]}
    assert captioning_at_tiou(dup, refs)["meteor_lite"] > captioning_at_tiou(weak, refs)["meteor_lite"]


def test_threshold_one_reduces_to_plain_corpus_scores():
    refs = {"v": [ev(0, 10, "the dog runs"), ev(20, 30, "a cat sleeps")], "w": [ev(1, 2, "birds fly")]}
    sub = {"v": [ev(0, 10, "a dog runs"), ev(20, 30, "the cat sleeps")], "w": [ev(1, 2, "birds fly fast")]}
    plain = corpus_caption_scores({v: [(p["sentence"], [g["sentence"]]) for p, g in zip(sub[v], refs[v])] for v in refs})
    assert captioning_at_tiou(sub, refs, threshold=1.0) == pytest.approx(plain)


# --- SODA ------------------------------------------------------------------------

def test_soda_single_pair():
    refs = {"v": [ev(0, 10, "a dog runs in the park")]}
    sub = {"v": [ev(0, 10, "a dog walks in the park")]}
    m = meteor_lite("a dog walks in the park", ["a dog runs in the park"])
    rep = soda(sub, refs)
    assert rep.per_video["v"] == pytest.approx([m, m, m])
    assert rep.f1 == pytest.approx(100 * m)
    assert soda({}, refs).f1 == 0.0


def test_dp_skips_crossing_pair_for_better_total():
    s = np.array([[0.1, 0.9], [0.8, 0.1]])
    total, pairs = order_preserving_max(s)
    assert total == pytest.approx(0.9) and pairs == [(0, 1)]
    s = np.array([[0.5, 0.9], [0.8, 0.6]])
    total, pairs = order_preserving_max(s)
    assert total == pytest.approx(1.1) and pairs == [(0, 0), (1, 1)]


def brute_force(scores):
    """Enumerate every subset of generated rows against every increasing column tuple."""
    n, m = scores.shape
    best = 0.0
    for rows in itertools.product([False, True], repeat=n):
        idx = [i for i in range(n) if rows[i]]
        for cols in itertools.combinations(range(m), len(idx)):
            best = max(best, sum(scores[i, j] for i, j in zip(idx, cols)))
    return best


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_dp_equals_brute_force(n, m, seed):
    r = np.random.default_rng(seed)
    s = r.random((n, m)) * (r.random((n, m)) > 0.3)
    total, pairs = order_preserving_max(s)
    assert total == pytest.approx(brute_force(s), abs=1e-12)
    assert total == pytest.approx(exhaustive_max(s), abs=1e-12)
    assert total == pytest.approx(sum(s[i, j] for i, j in pairs), abs=1e-12)
    assert all(a < c and b < d for (a, b), (c, d) in zip(pairs, pairs[1:]))


WORDS = ["dog", "cat", "runs", "sleeps", "a", "the", "park", "ball"]


@st.composite
def scene(draw, max_events=4):
    def events(k):
        out = []
        for _ in range(k):
            a = draw(st.integers(0, 40))
            b = draw(st.integers(a + 1, 50))
            sent = " ".join(draw(st.lists(st.sampled_from(WORDS), min_size=1, max_size=4)))
            out.append(ev(a, b, sent))
        return out

    refs = {"v": events(draw(st.integers(1, max_events)))}
    sub = {"v": events(draw(st.integers(1, max_events)))}
    return sub, refs


@given(scene(), st.integers(0, 3), st.sampled_from(["old", "mr"]))
def test_duplicating_an_event_never_raises_f(arg, k, mode):
    sub, refs = arg
    refs2 = [refs, {"v": [ev(e["timestamp"][0], e["timestamp"][1] + 1, e["sentence"]) for e in refs["v"]]}]
    g = sub["v"]
    dup = {"v": g + [dict(g[k % len(g)])]}
    for r in (refs, refs2):
        before = soda(sub, r, mode=mode)
        after = soda(dup, r, mode=mode)
        assert after.f1 <= before.f1 + 1e-9
        if before.f1 > 0:
            assert after.precision < before.precision


@given(scene())
def test_deleting_a_matched_event_never_raises_recall(arg):
    sub, refs = arg
    m = np.array([[tiou(g, r) * meteor_lite(g["sentence"], [r["sentence"]]) for r in refs["v"]] for g in sub["v"]])
    _, pairs = order_preserving_max(m)
    before = soda(sub, refs)
    for i, _ in pairs:
        cut = {"v": [g for j, g in enumerate(sub["v"]) if j != i]}
        assert soda(cut, refs).recall <= before.recall + 1e-9


@given(scene())
def test_mr_equals_old_with_one_reference_set(arg):
    sub, refs = arg
    a, b = soda(sub, refs, mode="old"), soda(sub, refs, mode="mr")
    assert (a.precision, a.recall, a.f1) == pytest.approx((b.precision, b.recall, b.f1))


def test_soda_old_averages_reference_sets_and_mr_pools_them():
    sub = {"v": [ev(0, 10, "a dog runs"), ev(10, 20, "a cat sleeps")]}
    r1 = {"v": [ev(0, 10, "a dog runs"), ev(10, 20, "a bird sings")]}
    r2 = {"v": [ev(0, 10, "a fox runs"), ev(10, 20, "a cat sleeps")]}
    one, two = soda(sub, r1), soda(sub, r2)
    old = soda(sub, [r1, r2])
    assert old.precision == pytest.approx((one.precision + two.precision) / 2)
    mr = soda(sub, [r1, r2], mode="mr")
    assert mr.f1 == pytest.approx(100.0)
    assert mr.f1 > old.f1


def test_soda_with_cider_inner_and_errors():
    refs = {"v": [ev(0, 10, "a dog runs"), ev(10, 20, "a cat sleeps")], "w": [ev(0, 3, "birds fly")]}
    rep = soda(refs, refs, inner_metric="cider")
    assert rep.f1 > 0
    with pytest.raises(ValueError):
        soda(refs, refs, inner_metric="bleu")
    with pytest.raises(ValueError):
        soda(refs, refs, mode="new")
    with pytest.raises(KeyError):
        soda({"zz": []}, refs)


def test_evaluate_report_fields():
    refs = {"v": [ev(0, 10, "a dog runs")]}
    rep = evaluate(refs, refs)
    assert set(rep) == {"format_version", "config", "detection", "captioning", "soda_old", "soda_mr"}
    assert rep["soda_old"]["f1"] == pytest.approx(100)

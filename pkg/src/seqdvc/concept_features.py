"""Per-frame semantic concept features from a bidirectional LSTM tagger.

The tagger predicts, for every frame, which caption concepts (nouns/verbs)
are active and whether the frame starts, continues or ends an event (or lies
outside all events). Its final-layer hidden states become extra frame
features.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from . import numerics
from .data.formats import DenseVideoRecord
from .data.tokenizer import tokenize
from .event_codec import encode, frame_span

START, MIDDLE, END, OUTSIDE = range(4)

# closed-class words never count as concepts
FUNCTION_WORDS = frozenset(
    """a an the this that these those some any each every no another
    i you he she it we they me him her us them my your his its our their someone somebody something
    is are was were be been being am do does did has have had will would can could shall should may might must
    and or but nor so yet if then than because while when where after before until since as
    of in on at to from by with without into onto over under about above below between through during
    up down out off again further once here there very too also just not only more most less first last
    """.split()
)


@dataclass(frozen=True)
class ConceptVocab:
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels or any(not l for l in self.labels):
            raise ValueError("concept labels must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("concept labels must be unique")

    def __len__(self):
        return len(self.labels)

    def index(self) -> dict[str, int]:
        return {l: i for i, l in enumerate(self.labels)}


def is_content_word(token: str) -> bool:
    """Rule-lexicon noun/verb test: alphabetic, not a function word, not an -ly adverb."""
    return token.isalpha() and len(token) > 1 and token not in FUNCTION_WORDS and not token.endswith("ly")


def build_concept_vocab(records: list[DenseVideoRecord], k: int) -> ConceptVocab:
    """Top-``k`` concepts by frequency (ties alphabetical).

    When every record carries latent activity labels (synthetic corpora),
    those labels are the candidate concepts; otherwise caption tokens that
    pass :func:`is_content_word`.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if records and all(r.activities for r in records):
        counts = Counter(a for r in records for a in r.activities)
    else:
        counts = Counter(t for r in records for s in r.sentences for t in tokenize(s) if is_content_word(t))
    if k > len(counts):
        raise ValueError(f"asked for {k} concepts but only {len(counts)} distinct candidates exist")
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return ConceptVocab(tuple(ranked[:k]))


def frame_targets(record: DenseVideoRecord, vocab: ConceptVocab) -> tuple[np.ndarray, np.ndarray]:
    """(N, K) concept targets and (N,) boundary labels for one video.

    Concept k is on for a frame iff the caption of some event containing the
    frame mentions it. A frame that starts any containing event is START;
    otherwise END if it ends one, MIDDLE if inside one, else OUTSIDE.
    """
    n = record.n_frames
    index = vocab.index()
    concepts = np.zeros((n, len(vocab)), dtype=np.float32)
    starts = np.zeros(n, dtype=bool)
    ends = np.zeros(n, dtype=bool)
    inside = np.zeros(n, dtype=bool)
    for ev, sent in zip(record.events, record.sentences):
        bits = encode(ev, n).astype(bool)
        first, last = frame_span(bits)
        inside |= bits
        starts[first] = True
        ends[last] = True
        hit = [index[t] for t in set(tokenize(sent)) if t in index]
        if hit:
            concepts[np.ix_(np.flatnonzero(bits), hit)] = 1.0
    labels = np.full(n, OUTSIDE, dtype=np.int64)
    labels[inside] = MIDDLE
    labels[ends] = END
    labels[starts] = START
    return concepts, labels


@dataclass
class CPTConfig:
    width: int = 32
    steps: int = 300
    batch_size: int = 16
    lr: float = 3e-3
    seed: int = 0
    boundary_weight: float = 1.0

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown cpt config keys: {sorted(bad)}")
        return cls(**d)


class ConceptTagger(nn.Module):
    def __init__(self, feature_dim: int, n_concepts: int, width: int):
        super().__init__()
        self.lstm = nn.LSTM(feature_dim, width, batch_first=True, bidirectional=True)
        self.concept_out = nn.Linear(2 * width, n_concepts)
        self.boundary_out = nn.Linear(2 * width, 4)

    @property
    def output_dim(self) -> int:
        return 2 * self.lstm.hidden_size

    def hidden(self, feats: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = pack_padded_sequence(feats, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=feats.shape[1])
        return out

    def forward(self, feats, lengths):
        h = self.hidden(feats, lengths)
        return self.concept_out(h), self.boundary_out(h)


def _pad(records, idx):
    n = max(records[i].n_frames for i in idx)
    d = records[idx[0]].features.shape[1]
    x = np.zeros((len(idx), n, d), dtype=np.float32)
    for b, i in enumerate(idx):
        x[b, : records[i].n_frames] = records[i].features
    return torch.from_numpy(x), torch.tensor([records[i].n_frames for i in idx])


def train_cpt(records: list[DenseVideoRecord], vocab: ConceptVocab, cfg: CPTConfig) -> ConceptTagger:
    """Multi-label concept BCE plus 4-way boundary cross-entropy, equally weighted."""
    if not records:
        raise ValueError("empty corpus")
    torch.manual_seed(cfg.seed)
    tagger = ConceptTagger(records[0].features.shape[1], len(vocab), cfg.width)
    targets = [frame_targets(r, vocab) for r in records]
    params = dict(tagger.named_parameters())
    state = numerics.AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 6])
    tagger.train()
    for _ in range(cfg.steps):
        idx = rng.integers(len(records), size=min(cfg.batch_size, len(records)))
        x, lengths = _pad(records, idx)
        n = x.shape[1]
        concept_t = np.zeros((len(idx), n, len(vocab)), dtype=np.float32)
        bound_t = np.full((len(idx), n), -100, dtype=np.int64)
        for b, i in enumerate(idx):
            c, l = targets[i]
            concept_t[b, : len(l)] = c
            bound_t[b, : len(l)] = l
        valid = (torch.arange(n).unsqueeze(0) < lengths.unsqueeze(1)).float()
        concept_logits, bound_logits = tagger(x, lengths)
        bce = nn.functional.binary_cross_entropy_with_logits(
            concept_logits, torch.from_numpy(concept_t), reduction="none"
        ).mean(-1)
        concept_loss = (bce * valid).sum() / valid.sum()
        bound_loss = nn.functional.cross_entropy(bound_logits.reshape(-1, 4), torch.from_numpy(bound_t).reshape(-1))
        loss = concept_loss + cfg.boundary_weight * bound_loss
        tagger.zero_grad(set_to_none=True)
        loss.backward()
        numerics.adam_step(params, {k: p.grad for k, p in params.items()}, state)
    tagger.eval()
    return tagger


@torch.no_grad()
def predict_frames(tagger: ConceptTagger, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(N, K) concept probabilities and (N,) boundary class predictions."""
    x = torch.from_numpy(np.asarray(features, dtype=np.float32)).unsqueeze(0)
    c, b = tagger(x, torch.tensor([x.shape[1]]))
    return torch.sigmoid(c[0]).numpy(), b[0].argmax(-1).numpy()


@torch.no_grad()
def extract_concept_features(tagger: ConceptTagger, features: np.ndarray) -> np.ndarray:
    """Concatenated forward/backward hidden states, shape (N, 2 * width)."""
    tagger.eval()
    x = torch.from_numpy(np.asarray(features, dtype=np.float32)).unsqueeze(0)
    return tagger.hidden(x, torch.tensor([x.shape[1]]))[0].numpy().astype(np.float32)


def augment_records(records: list[DenseVideoRecord], tagger: ConceptTagger) -> list[DenseVideoRecord]:
    """Copies of ``records`` whose features gain the concept features as extra columns."""
    out = []
    for r in records:
        extra = extract_concept_features(tagger, r.features)
        out.append(dataclasses.replace(r, features=np.concatenate([r.features, extra], axis=1)))
    return out


def save_tagger(path, tagger: ConceptTagger, vocab: ConceptVocab, cfg: CPTConfig) -> None:
    meta = {
        "labels": list(vocab.labels),
        "feature_dim": tagger.lstm.input_size,
        "width": tagger.lstm.hidden_size,
        "config": dataclasses.asdict(cfg),
    }
    numerics.save_checkpoint(path, tagger.state_dict(), meta)


def load_tagger(path) -> tuple[ConceptTagger, ConceptVocab]:
    params, meta = numerics.load_checkpoint(path)
    vocab = ConceptVocab(tuple(meta["labels"]))
    tagger = ConceptTagger(meta["feature_dim"], len(vocab), meta["width"])
    tagger.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in params.items()})
    tagger.eval()
    return tagger, vocab

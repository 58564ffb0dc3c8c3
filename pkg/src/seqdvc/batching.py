"""Per-sample masking and collation into padded model batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data.formats import DenseVideoRecord
from .data.tokenizer import EOS_ID, MASK_ID, PAD_ID, SOS_ID, Vocab
from .event_codec import encode, frame_span, sort_and_validate
from .model import ModelConfig

BERT_BRANCHES = (0.8, 0.1, 0.1)


@dataclass
class PreparedVideo:
    video_id: str
    features: np.ndarray  # (N, D) float32
    events: np.ndarray  # (M, N) uint8, temporally sorted
    captions: list[list[int]]  # word ids per event, no SOS/EOS
    duration: float
    mefm: bool = True


def prepare(records: list[DenseVideoRecord], vocab: Vocab, config: ModelConfig) -> list[PreparedVideo]:
    out = []
    max_words = config.max_text_len - 2
    for r in records:
        n = r.n_frames
        if n > config.max_frames:
            raise ValueError(f"{r.video_id}: {n} frames exceeds max_frames={config.max_frames}")
        if r.features.shape[1] != config.feature_dim:
            raise ValueError(f"{r.video_id}: feature dim {r.features.shape[1]} != {config.feature_dim}")
        if len(r.events) > config.max_events:
            raise ValueError(f"{r.video_id}: {len(r.events)} events exceeds max_events={config.max_events}")
        bits = [encode(ev, n) for ev in r.events]
        order = sorted(range(len(bits)), key=lambda i: (frame_span(bits[i]), i))
        events = np.stack([bits[i] for i in order])
        caps = [vocab.encode(r.sentences[i])[:max_words] for i in order]
        out.append(PreparedVideo(r.video_id, r.features.astype(np.float32), events, caps, r.duration, r.mefm))
    return out


def sample_rng(seed: int, step: int, sample: int) -> np.random.Generator:
    """Independent stream per (run seed, step, sample slot)."""
    return np.random.default_rng([seed, step, sample])


# --- masking procedures ---------------------------------------------------------

def _select(n: int, rng, p: float) -> np.ndarray:
    sel = rng.random(n) < p
    if not sel.any():
        sel[rng.integers(n)] = True
    return np.flatnonzero(sel)


def mask_text(tokens, rng, vocab_size: int, first_word_id: int = 5, p: float = 0.15, branches=BERT_BRANCHES):
    """Select each position w.p. ``p`` (at least one), then corrupt it.

    A selected token becomes [MASK], a random word, or stays unchanged with
    probabilities ``branches``. Returns ``(masked, positions, targets)``.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot mask an empty caption")
    pos = _select(len(tokens), rng, p)
    masked = list(tokens)
    p_mask, p_rand, _ = branches
    for i in pos:
        u = rng.random()
        if u < p_mask:
            masked[i] = MASK_ID
        elif u < p_mask + p_rand:
            masked[i] = int(rng.integers(first_word_id, vocab_size))
    return masked, pos, [tokens[i] for i in pos]


def mask_video_frames(video: np.ndarray, event_bits, rng, p: float = 0.15):
    """Zero out ~``p`` of the frames inside the event span (at least one)."""
    video = np.asarray(video)
    bits = np.asarray(event_bits)
    if bits.shape[0] != video.shape[0]:
        raise ValueError("event vector length does not match the video")
    first, last = frame_span(bits)
    pos = first + _select(last - first + 1, rng, p)
    masked = video.copy()
    targets = video[pos].copy()
    masked[pos] = 0.0
    return masked, pos, targets


def mask_events(events: np.ndarray, rng, p: float = 0.15):
    """Replace ~``p`` of the event vectors (at least one) by all-zero rows."""
    events = np.asarray(events)
    if events.shape[0] == 0:
        raise ValueError("cannot mask an empty event sequence")
    pos = _select(events.shape[0], rng, p)
    masked = events.copy()
    targets = events[pos].copy()
    masked[pos] = 0
    return masked, pos, targets


# --- batches ----------------------------------------------------------------------

@dataclass
class MultimodalBatch:
    """Padded model inputs plus masked-prediction targets.

    ``kind`` is one of ``three`` / ``two`` (pre-training) or ``ed`` / ``ec``
    (fine-tuning). Target index tensors address (sample, position) pairs;
    event positions are event-stream rows, so event ``i`` is row ``i + 1``.
    """

    kind: str
    video: torch.Tensor
    video_len: torch.Tensor
    events: torch.Tensor
    event_len: torch.Tensor
    n_frames: torch.Tensor
    text: torch.Tensor | None = None
    text_len: torch.Tensor | None = None
    current_event: torch.Tensor | None = None
    text_tgt: tuple | None = None  # (batch idx, text pos, token id)
    frame_tgt: tuple | None = None  # (batch idx, frame idx, features)
    event_tgt: tuple | None = None  # (batch idx, event row, bits, stop, valid)


class _Collector:
    def __init__(self, max_frames: int):
        self.F = max_frames
        self.videos, self.events, self.texts = [], [], []
        self.current = []
        self.text_t = ([], [], [])
        self.frame_t = ([], [], [])
        self.event_t = ([], [], [], [], [])

    def add(self, video, events, text=None, current=None):
        self.videos.append(np.asarray(video, dtype=np.float32))
        self.events.append(np.asarray(events, dtype=np.float32))
        if text is not None:
            self.texts.append(list(text))
        if current is not None:
            self.current.append(int(current))
        return len(self.videos) - 1

    def build(self, kind: str) -> MultimodalBatch:
        B = len(self.videos)
        N = max(v.shape[0] for v in self.videos)
        D = self.videos[0].shape[1]
        M = max(e.shape[0] for e in self.events)
        video = np.zeros((B, N, D), dtype=np.float32)
        events = np.zeros((B, M, self.F), dtype=np.float32)
        for b, (v, e) in enumerate(zip(self.videos, self.events)):
            video[b, : v.shape[0]] = v
            events[b, : e.shape[0], : e.shape[1]] = e
        n_frames = torch.tensor([v.shape[0] for v in self.videos])
        batch = MultimodalBatch(
            kind=kind,
            video=torch.from_numpy(video),
            video_len=n_frames.clone(),
            events=torch.from_numpy(events),
            event_len=torch.tensor([e.shape[0] for e in self.events]),
            n_frames=n_frames,
        )
        if self.texts:
            S = max(len(t) for t in self.texts)
            text = np.full((B, S), PAD_ID, dtype=np.int64)
            for b, t in enumerate(self.texts):
                text[b, : len(t)] = t
            batch.text = torch.from_numpy(text)
            batch.text_len = torch.tensor([len(t) for t in self.texts])
        if self.current:
            batch.current_event = torch.tensor(self.current)
        if self.text_t[0]:
            b, p, y = self.text_t
            batch.text_tgt = (torch.tensor(b), torch.tensor(p), torch.tensor(y))
        if self.frame_t[0]:
            b, p, y = self.frame_t
            batch.frame_tgt = (torch.tensor(b), torch.tensor(p), torch.from_numpy(np.stack(y)).float())
        if self.event_t[0]:
            b, p, bits, stop, valid = self.event_t
            batch.event_tgt = (
                torch.tensor(b),
                torch.tensor(p),
                torch.from_numpy(np.stack(bits)).float(),
                torch.tensor(stop, dtype=torch.float32),
                torch.from_numpy(np.stack(valid)).float(),
            )
        return batch


def _padded_bits(bits, F):
    out = np.zeros(F, dtype=np.float32)
    out[: len(bits)] = bits
    return out


def _valid_frames(n, F):
    out = np.zeros(F, dtype=np.float32)
    out[:n] = 1.0
    return out


def build_three_batch(samples, config: ModelConfig, vocab_size: int, seed: int, step: int, p: float = 0.15):
    """``samples``: list of (PreparedVideo, event index). MLM + MVFR targets."""
    col = _Collector(config.max_frames)
    for slot, (pv, i) in enumerate(samples):
        rng = sample_rng(seed, step, slot)
        content = pv.captions[i] + [EOS_ID]
        masked, pos, tgt = mask_text(content, rng, vocab_size, p=p)
        video, fpos, ftgt = mask_video_frames(pv.features, pv.events[i], rng, p=p)
        b = col.add(video, pv.events, [SOS_ID] + masked, current=i)
        for q, y in zip(pos, tgt):
            col.text_t[0].append(b)
            col.text_t[1].append(int(q) + 1)
            col.text_t[2].append(int(y))
        for q, y in zip(fpos, ftgt):
            col.frame_t[0].append(b)
            col.frame_t[1].append(int(q))
            col.frame_t[2].append(y)
    return col.build("three")


def build_two_batch(videos, config: ModelConfig, seed: int, step: int, p: float = 0.15):
    """MEFM: mask events bidirectionally; stop target is always 0."""
    col = _Collector(config.max_frames)
    for slot, pv in enumerate(videos):
        rng = sample_rng(seed, step, slot)
        masked, pos, tgt = mask_events(pv.events, rng, p=p)
        b = col.add(pv.features, masked)
        n = pv.features.shape[0]
        for q, y in zip(pos, tgt):
            col.event_t[0].append(b)
            col.event_t[1].append(int(q) + 1)
            col.event_t[2].append(_padded_bits(y, config.max_frames))
            col.event_t[3].append(0.0)
            col.event_t[4].append(_valid_frames(n, config.max_frames))
    return col.build("two")


def build_ed_batch(videos, config: ModelConfig, seed: int, step: int, p: float = 0.15):
    """Event generation: sequence e_1..e_M plus a trailing stop slot.

    Candidate rows are the M events and the stop slot. Selected rows are fed
    as all-zero vectors and predicted from strictly earlier rows under the
    causal mask; the stop slot's target is an all-zero vector with stop = 1.
    """
    col = _Collector(config.max_frames)
    for slot, pv in enumerate(videos):
        rng = sample_rng(seed, step, slot)
        M, n = pv.events.shape
        seq = np.concatenate([pv.events, np.zeros((1, n), dtype=pv.events.dtype)])
        pos = _select(M + 1, rng, p)
        seq[pos] = 0
        b = col.add(pv.features, seq)
        for q in pos:
            stop = q == M
            bits = np.zeros(n) if stop else pv.events[q]
            col.event_t[0].append(b)
            col.event_t[1].append(int(q) + 1)
            col.event_t[2].append(_padded_bits(bits, config.max_frames))
            col.event_t[3].append(1.0 if stop else 0.0)
            col.event_t[4].append(_valid_frames(n, config.max_frames))
    return col.build("ed")


def build_ec_batch(samples, config: ModelConfig, seed: int, step: int, p: float = 0.15):
    """Caption generation: ~p of the caption positions become [MASK] and are
    predicted from the strict prefix, the current event and the video."""
    col = _Collector(config.max_frames)
    for slot, (pv, i) in enumerate(samples):
        rng = sample_rng(seed, step, slot)
        content = pv.captions[i] + [EOS_ID]
        pos = _select(len(content), rng, p)
        text = [SOS_ID] + content
        for q in pos:
            text[q + 1] = MASK_ID
        b = col.add(pv.features, pv.events, text, current=i)
        for q in pos:
            col.text_t[0].append(b)
            col.text_t[1].append(int(q) + 1)
            col.text_t[2].append(int(content[q]))
    return col.build("ec")


def inference_inputs(features, events, config: ModelConfig):
    """Single-sample tensors for generation: video (1,N,D), events (1,M,F)."""
    feats = torch.as_tensor(np.asarray(features, dtype=np.float32)).unsqueeze(0)
    n = feats.shape[1]
    ev = np.zeros((1, len(events), config.max_frames), dtype=np.float32)
    for j, e in enumerate(events):
        ev[0, j, : len(e)] = e
    return feats, torch.tensor([n]), torch.from_numpy(ev), torch.tensor([len(events)])


def sorted_events(events) -> list[np.ndarray]:
    return sort_and_validate(events)

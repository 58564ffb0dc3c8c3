"""Fine-tuning into event/caption generators and detect-then-describe inference."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from .batching import PreparedVideo, build_ec_batch, build_ed_batch, inference_inputs
from .data.tokenizer import EOS_ID, MASK_ID, PAD_ID, SOS_ID, UNK_ID, Vocab
from .event_codec import TimeInterval, decode, sort_and_validate
from .model import EVENT, TEXT, DenseCaptioner, build_causal_mask, build_caption_mask
from .pretraining import TrainConfig, TrainResult, event_pairs, optimise


@dataclass
class DecodeConfig:
    frame_threshold: float = 0.5
    stop_threshold: float = 0.5
    max_events: int = 8
    max_caption_len: int = 20
    sample_events: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("frame_threshold", "stop_threshold"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_events < 1 or self.max_caption_len < 1:
            raise ValueError("decode limits must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown decode config keys: {sorted(bad)}")
        return cls(**d)


def finetune_ed(model: DenseCaptioner, videos: list[PreparedVideo], cfg: TrainConfig) -> TrainResult:
    """Train the event generator: causal event stream, masked-slot prediction, stop slot."""
    pool = [pv for pv in videos if pv.mefm]
    if not pool:
        raise ValueError("no videos with event annotations")

    def make_batch(step):
        pick = np.random.default_rng([cfg.seed, 4, step])
        idx = pick.integers(len(pool), size=cfg.batch_size)
        return build_ed_batch([pool[j] for j in idx], model.config, cfg.seed, step, cfg.mask_prob)

    return optimise(model, cfg, make_batch, tasks=("ed",))


def finetune_ec(model: DenseCaptioner, videos: list[PreparedVideo], cfg: TrainConfig) -> TrainResult:
    """Train the caption generator: causal text stream with other events blocked."""
    pairs = event_pairs(videos)
    if not pairs:
        raise ValueError("no captioned events")

    def make_batch(step):
        pick = np.random.default_rng([cfg.seed, 5, step])
        idx = pick.integers(len(pairs), size=cfg.batch_size)
        samples = [(videos[pairs[j][0]], pairs[j][1]) for j in idx]
        return build_ec_batch(samples, model.config, cfg.seed, step, cfg.mask_prob)

    return optimise(model, cfg, make_batch, tasks=("ec",))


@torch.no_grad()
def event_step_logits(model: DenseCaptioner, features, prefix) -> tuple[torch.Tensor, torch.Tensor]:
    """Frame and stop logits for the slot following ``prefix`` events."""
    n = np.asarray(features).shape[0]
    slots = list(prefix) + [np.zeros(n, dtype=np.uint8)]
    video, vlen, ev, elen = inference_inputs(features, slots, model.config)
    streams = model.embed_streams(video, vlen, ev, elen)
    h = model.encode(streams, build_causal_mask(streams.layout, EVENT))
    row = h[0, streams.layout.n_video + len(slots)]
    return model.mefm_head(row, n)


@torch.no_grad()
def generate_events(model: DenseCaptioner, features, decode_cfg: DecodeConfig, prefix=()) -> list[np.ndarray]:
    """Autoregressively emit event vectors until stop, an empty vector, or the limit.

    ``prefix`` force-feeds already generated events.
    """
    model.eval()
    events = [np.asarray(e, dtype=np.uint8) for e in prefix]
    limit = min(decode_cfg.max_events, model.config.max_events)
    rng = np.random.default_rng(decode_cfg.seed) if decode_cfg.sample_events else None
    while len(events) < limit:
        frames, stop = event_step_logits(model, features, events)
        if torch.sigmoid(stop).item() > decode_cfg.stop_threshold:
            break
        probs = torch.sigmoid(frames).numpy()
        if rng is None:
            bits = (probs > decode_cfg.frame_threshold).astype(np.uint8)
        else:
            bits = (rng.random(probs.shape) < probs).astype(np.uint8)
        if not bits.any():
            break
        events.append(bits)
    return sort_and_validate(events)


_BANNED = (PAD_ID, SOS_ID, MASK_ID, UNK_ID)


@torch.no_grad()
def caption_step_logits(model: DenseCaptioner, features, events, index: int, tokens) -> torch.Tensor:
    video, vlen, ev, elen = inference_inputs(features, events, model.config)
    text = torch.tensor([list(tokens) + [MASK_ID]])
    streams = model.embed_streams(video, vlen, ev, elen, text, torch.tensor([text.shape[1]]))
    layout = streams.layout
    mask = build_causal_mask(layout, TEXT) & build_caption_mask(layout, torch.tensor([index]))
    h = model.encode(streams, mask)
    return model.mlm_head(h[0, layout.length - 1])


@torch.no_grad()
def generate_caption(model: DenseCaptioner, features, events, index: int, decode_cfg: DecodeConfig) -> list[int]:
    """Greedy caption for event ``index``; returns word ids without SOS/EOS."""
    model.eval()
    if not 0 <= index < len(events):
        raise IndexError("event index out of range")
    tokens = [SOS_ID]
    limit = min(decode_cfg.max_caption_len, model.config.max_text_len - 1)
    while len(tokens) - 1 < limit:
        logits = caption_step_logits(model, features, events, index, tokens).clone()
        logits[list(_BANNED)] = -float("inf")
        tok = int(torch.argmax(logits))
        if tok == EOS_ID:
            break
        tokens.append(tok)
    return tokens[1:]


def detect_then_describe(
    ed_model: DenseCaptioner,
    ec_model: DenseCaptioner,
    features,
    duration: float,
    vocab: Vocab,
    decode_cfg: DecodeConfig,
) -> list[tuple[TimeInterval, str]]:
    events = generate_events(ed_model, features, decode_cfg)
    out = []
    for i, bits in enumerate(events):
        ids = generate_caption(ec_model, features, events, i, decode_cfg)
        out.append((decode(bits, duration), vocab.decode(ids)))
    return out


def predict_submission(ed_model, ec_model, videos: list[PreparedVideo], vocab: Vocab, decode_cfg: DecodeConfig) -> dict:
    results = {}
    for pv in videos:
        preds = detect_then_describe(ed_model, ec_model, pv.features, pv.duration, vocab, decode_cfg)
        results[pv.video_id] = [{"sentence": s, "timestamp": iv.as_list()} for iv, s in preds]
    return results


def predict_events(ed_model, videos: list[PreparedVideo], decode_cfg: DecodeConfig) -> dict:
    """Detection-only submission (empty sentences)."""
    results = {}
    for pv in videos:
        events = generate_events(ed_model, pv.features, decode_cfg)
        results[pv.video_id] = [{"sentence": "", "timestamp": decode(b, pv.duration).as_list()} for b in events]
    return results

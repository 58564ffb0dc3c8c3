"""Masked pre-training (MLM, MVFR, MEFM) and the alternating batch trainer."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import numerics
from .batching import MultimodalBatch, PreparedVideo, build_three_batch, build_two_batch
from .model import EVENT, TEXT, DenseCaptioner, base_mask, build_causal_mask, build_caption_mask

log = logging.getLogger(__name__)

THREE, TWO = "three", "two"


class NonFiniteLoss(RuntimeError):
    def __init__(self, step, losses):
        super().__init__(f"non-finite loss at step {step}: {losses}")
        self.step = step
        self.losses = losses


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 5e-4
    warmup: int = 100
    grad_clip: float = 1.0
    lam: float = 1 / 3
    seed: int = 0
    mask_prob: float = 0.15
    tasks: list = field(default_factory=lambda: ["mlm", "mvfr", "mefm"])
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.lr <= 0 or self.steps < 0 or self.batch_size < 1:
            raise ValueError("invalid optimisation settings")
        unknown = set(self.tasks) - {"mlm", "mvfr", "mefm"}
        if unknown:
            raise ValueError(f"unknown pre-training tasks {sorted(unknown)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown train config keys: {sorted(bad)}")
        return cls(**d)


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)  # (step, task, value)

    def series(self, task: str) -> list[float]:
        return [v for _, t, v in self.losses if t == task]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "task", "loss"])
            for step, task, value in self.losses:
                w.writerow([step, task, repr(float(value))])


def sample_batch_kind(lam: float, rng) -> str:
    """B_three with probability ``lam``, else B_two."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return THREE if rng.random() < lam else TWO


# --- losses ---------------------------------------------------------------------

def mlm_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean NLL over the masked positions."""
    return numerics.cross_entropy(logits, targets)


def mvfr_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Squared error summed over feature dimensions, mean over masked frames."""
    return numerics.l2_loss(pred, target)


def mefm_loss(frame_logits, stop_logits, frame_targets, stop_targets, frame_valid=None) -> torch.Tensor:
    """Per-frame BCE summed over real frames plus the stop BCE, mean over masked events."""
    per = torch.nn.functional.binary_cross_entropy_with_logits(frame_logits, frame_targets, reduction="none")
    if frame_valid is not None:
        per = per * frame_valid
    stop = torch.nn.functional.binary_cross_entropy_with_logits(stop_logits, stop_targets, reduction="none")
    return (per.sum(-1) + stop).mean()


def batch_mask(model: DenseCaptioner, batch: MultimodalBatch, layout):
    if batch.kind == THREE:
        return build_caption_mask(layout, batch.current_event)
    if batch.kind == TWO:
        return base_mask(layout)
    if batch.kind == "ed":
        return build_causal_mask(layout, EVENT)
    if batch.kind == "ec":
        return build_causal_mask(layout, TEXT) & build_caption_mask(layout, batch.current_event)
    raise ValueError(f"unknown batch kind {batch.kind!r}")


def encode_batch(model: DenseCaptioner, batch: MultimodalBatch):
    streams = model.embed_streams(
        batch.video, batch.video_len, batch.events, batch.event_len, batch.text, batch.text_len
    )
    mask = batch_mask(model, batch, streams.layout)
    return model.encode(streams, mask), streams.layout


def loss_mlm(model, batch, hidden, layout) -> torch.Tensor:
    b, p, y = batch.text_tgt
    rows = hidden[b, layout.n_video + layout.n_event + p]
    return mlm_loss(model.mlm_head(rows), y)


def loss_mvfr(model, batch, hidden, layout) -> torch.Tensor:
    b, p, y = batch.frame_tgt
    return mvfr_loss(model.mvfr_head(hidden[b, p]), y)


def loss_mefm(model, batch, hidden, layout) -> torch.Tensor:
    b, p, bits, stop, valid = batch.event_tgt
    frames, stop_logit = model.mefm_head(hidden[b, layout.n_video + p])
    return mefm_loss(frames, stop_logit, bits, stop, valid)


def batch_losses(model: DenseCaptioner, batch: MultimodalBatch, tasks=("mlm", "mvfr", "mefm")) -> dict:
    hidden, layout = encode_batch(model, batch)
    out = {}
    if batch.kind == THREE:
        if "mlm" in tasks:
            out["mlm"] = loss_mlm(model, batch, hidden, layout)
        if "mvfr" in tasks:
            out["mvfr"] = loss_mvfr(model, batch, hidden, layout)
    elif batch.kind == TWO:
        out["mefm"] = loss_mefm(model, batch, hidden, layout)
    elif batch.kind == "ed":
        out["ed"] = loss_mefm(model, batch, hidden, layout)
    elif batch.kind == "ec":
        out["ec"] = loss_mlm(model, batch, hidden, layout)
    return out


# --- training loop ----------------------------------------------------------------

def event_pairs(videos: list[PreparedVideo]) -> list[tuple[int, int]]:
    return [(v, i) for v, pv in enumerate(videos) for i in range(len(pv.captions))]


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.warmup <= 0:
        return cfg.lr
    return cfg.lr * min(1.0, (step + 1) / cfg.warmup)


def optimise(
    model: DenseCaptioner,
    cfg: TrainConfig,
    make_batch: Callable[[int], MultimodalBatch | None],
    tasks=("mlm", "mvfr", "mefm"),
    on_checkpoint: Callable[[int], None] | None = None,
) -> TrainResult:
    """Generic Adam loop; ``make_batch(step)`` returns the step's batch."""
    params = dict(model.named_parameters())
    state = numerics.AdamState(lr=cfg.lr)
    result = TrainResult()
    model.train()
    for step in range(cfg.steps):
        batch = make_batch(step)
        if batch is None:
            continue
        model.zero_grad(set_to_none=True)
        terms = batch_losses(model, batch, tasks)
        if not terms:
            continue
        total = sum(terms.values())
        values = {k: float(v.detach()) for k, v in terms.items()}
        if not all(math.isfinite(v) for v in values.values()):
            raise NonFiniteLoss(step, values)
        total.backward()
        grads = {n: p.grad for n, p in params.items()}
        numerics.clip_grad_norm(grads, cfg.grad_clip)
        state.lr = _lr_at(cfg, step)
        numerics.adam_step(params, grads, state)
        for k, v in values.items():
            result.losses.append((step, k, v))
        if on_checkpoint is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(step + 1)
        if step % 200 == 0:
            log.debug("step %d %s", step, values)
    model.eval()
    return result


def pretrain(model: DenseCaptioner, videos: list[PreparedVideo], cfg: TrainConfig, vocab_size: int, on_checkpoint=None) -> TrainResult:
    """Alternate B_three (MLM + MVFR) and B_two (MEFM) batches with probability lambda."""
    if not videos:
        raise ValueError("empty corpus")
    pairs = event_pairs(videos)
    two_pool = [i for i, pv in enumerate(videos) if pv.mefm]
    three_tasks = [t for t in cfg.tasks if t in ("mlm", "mvfr")]
    lam = cfg.lam
    if not three_tasks:
        lam = 0.0
    if "mefm" not in cfg.tasks or not two_pool:
        lam = 1.0 if three_tasks else lam
    if not three_tasks and ("mefm" not in cfg.tasks or not two_pool):
        raise ValueError("no pre-training task is runnable on this corpus")
    sched = np.random.default_rng([cfg.seed, 1])
    bs = cfg.batch_size

    def make_batch(step):
        kind = sample_batch_kind(lam, sched)
        pick = np.random.default_rng([cfg.seed, 2, step])
        if kind == THREE:
            idx = pick.integers(len(pairs), size=bs)
            samples = [(videos[pairs[j][0]], pairs[j][1]) for j in idx]
            return build_three_batch(samples, model.config, vocab_size, cfg.seed, step, cfg.mask_prob)
        idx = pick.integers(len(two_pool), size=bs)
        return build_two_batch([videos[two_pool[j]] for j in idx], model.config, cfg.seed, step, cfg.mask_prob)

    return optimise(model, cfg, make_batch, tasks=tuple(cfg.tasks), on_checkpoint=on_checkpoint)


@torch.no_grad()
def evaluate_losses(model: DenseCaptioner, videos: list[PreparedVideo], vocab_size: int, seed: int = 12345, batch_size: int = 32) -> dict:
    """Losses of all three tasks on fixed, seed-determined batches."""
    model.eval()
    rng = np.random.default_rng([seed, 3])
    pairs = event_pairs(videos)
    idx = rng.integers(len(pairs), size=batch_size)
    three = build_three_batch([(videos[pairs[j][0]], pairs[j][1]) for j in idx], model.config, vocab_size, seed, 0)
    out = {k: float(v) for k, v in batch_losses(model, three).items()}
    pool = [pv for pv in videos if pv.mefm]
    if pool:
        vidx = rng.integers(len(pool), size=batch_size)
        two = build_two_batch([pool[j] for j in vidx], model.config, seed, 1)
        out.update({k: float(v) for k, v in batch_losses(model, two).items()})
    return out


def save_model(path, model: DenseCaptioner, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta["model_config"] = model.config.to_dict()
    numerics.save_checkpoint(path, {n: p for n, p in model.state_dict().items()}, meta)


def load_model(path) -> tuple[DenseCaptioner, dict]:
    from .model import ModelConfig

    params, meta = numerics.load_checkpoint(path)
    model = DenseCaptioner(ModelConfig.from_dict(meta["model_config"]))
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in params.items()})
    model.eval()
    return model, meta

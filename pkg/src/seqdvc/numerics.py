"""Dense tensor numerics: gradients, masked attention, Adam and checkpoints.

Tensors and reverse-mode differentiation come from torch; everything the
models rely on beyond that (attention convention, optimizer, checkpoint
format, finite-difference checking) lives here.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

Tensor = torch.Tensor

CHECKPOINT_FORMAT_VERSION = 1


class UnusedParameterWarning(RuntimeWarning):
    """A parameter passed to :func:`grad` does not influence the loss."""


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))


def grad(loss: Tensor, params: Mapping[str, Tensor] | Iterable[Tensor]) -> dict:
    """Gradient of a scalar ``loss`` with respect to each parameter.

    Parameters that the loss does not depend on get an all-zero gradient and
    trigger an :class:`UnusedParameterWarning`. The graph is retained, so
    calling this twice on the same loss gives identical results.
    """
    if loss.numel() != 1:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if isinstance(params, Mapping):
        keys = list(params.keys())
        tensors = list(params.values())
    else:
        tensors = list(params)
        keys = tensors
    grads = torch.autograd.grad(loss, tensors, allow_unused=True, retain_graph=True)
    out = {}
    missing = []
    for key, t, g in zip(keys, tensors, grads):
        if g is None:
            missing.append(key if isinstance(key, str) else tuple(t.shape))
            g = torch.zeros_like(t)
        out[key] = g
    if missing:
        warnings.warn(f"no gradient path to {missing}", UnusedParameterWarning, stacklevel=2)
    return out


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None, heads: int) -> Tensor:
    """Scaled dot-product attention split over ``heads``.

    q, k, v: (..., L, H). mask: (L, L) or (..., L, L) boolean, True where the
    query may attend the key. Disallowed keys get exactly zero weight; a query
    row with no allowed key produces a zero output row.
    """
    *batch, length, hidden = q.shape
    if hidden % heads:
        raise ValueError(f"hidden size {hidden} not divisible by {heads} heads")
    d = hidden // heads

    def split(x):
        return x.reshape(*x.shape[:-1], heads, d).transpose(-2, -3)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(d)
    if mask is not None:
        allow = mask.unsqueeze(-3)
        scores = scores.masked_fill(~allow, torch.finfo(scores.dtype).min)
        weights = torch.softmax(scores, dim=-1) * allow.to(scores.dtype)
    else:
        weights = torch.softmax(scores, dim=-1)
    out = weights @ vh
    return out.transpose(-2, -3).reshape(*batch, length, hidden)


# loss primitives, all reduced to a scalar mean over rows

def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    return F.layer_norm(x, x.shape[-1:], weight, bias, eps)


def cross_entropy(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits`` rows."""
    return F.cross_entropy(logits, targets)


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Elementwise binary cross-entropy, summed over the last axis, mean over rows."""
    per = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    return per.sum(-1).mean()


def l2_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Squared L2 distance summed over the last axis, mean over rows."""
    return ((pred - target) ** 2).sum(-1).mean()


def embedding_gather(table: Tensor, ids: Tensor) -> Tensor:
    return F.embedding(ids, table)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, Tensor | None], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    A missing or ``None`` gradient counts as zero.
    """
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        elif g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
        if name not in state.m:
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(state.lr * (m / c1) / ((v / c2).sqrt() + state.eps))
    return state


def clip_grad_norm(grads: Mapping[str, Tensor | None], max_norm: float) -> float:
    present = [g for g in grads.values() if g is not None]
    if not present:
        return 0.0
    total = torch.sqrt(sum((g.double() ** 2).sum() for g in present)).item()
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in present:
            g.mul_(scale)
    return total


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    """Write parameters to an ``.npz`` container with a JSON manifest."""
    arrays = {}
    entries = []
    for i, (name, value) in enumerate(params.items()):
        arr = value.detach().cpu().numpy() if isinstance(value, Tensor) else np.asarray(value)
        key = f"p{i}"
        arrays[key] = np.ascontiguousarray(arr)
        entries.append({"name": name, "key": key, "shape": list(arr.shape), "dtype": str(arr.dtype)})
    manifest = {"format_version": CHECKPOINT_FORMAT_VERSION, "params": entries, "meta": meta or {}}
    buf = io.BytesIO()
    np.savez(buf, __manifest__=np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(name -> ndarray, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(bytes(z["__manifest__"]).decode())
        if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
        params = {}
        for e in manifest["params"]:
            arr = z[e["key"]]
            if list(arr.shape) != e["shape"] or str(arr.dtype) != e["dtype"]:
                raise ValueError(f"checkpoint entry {e['name']} does not match its manifest")
            params[e["name"]] = arr
    return params, manifest["meta"]


def finite_difference_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-3, coords=None) -> np.ndarray:
    """Central differences of a scalar function of a float64 array.

    Only the flat indices in ``coords`` are evaluated (all by default); the
    rest of the result is NaN.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.full(flat.shape, np.nan)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)`` over finite entries."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = np.isfinite(n)
    a, n = a[keep], n[keep]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))

"""Multi-stream video/event/text transformer with its three prediction heads.

The joint sequence is laid out as ``[video | start, events | text]``. Each
modality first passes through its own encoder (attention restricted to the
modality's diagonal block of the joint mask), then a cross encoder runs
self-attention over the concatenation. Every masking rule (other-event
blocking, causal generation, padding) is expressed as one boolean mask of
shape (B, L, L).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numerics import Tensor, multi_head_attention

VIDEO, EVENT, TEXT = 0, 1, 2


@dataclass
class ModelConfig:
    feature_dim: int = 16
    vocab_size: int = 64
    hidden: int = 64
    heads: int = 4
    video_layers: int = 1
    event_layers: int = 1
    text_layers: int = 1
    cross_layers: int = 4
    max_frames: int = 32
    max_text_len: int = 24
    max_events: int = 10
    tie_mlm: bool = True
    video_positions: bool = True
    ffn_mult: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        for name in ("feature_dim", "vocab_size", "hidden", "heads", "max_frames", "max_text_len", "max_events"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("video_layers", "event_layers", "text_layers", "cross_layers"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Layout:
    """Per-batch geometry of the joint sequence.

    ``event_len`` counts the start row, so a video with M events has
    ``event_len == M + 1``; event ``i`` lives at event row ``i + 1``.
    """

    video_len: Tensor
    event_len: Tensor
    text_len: Tensor
    n_video: int
    n_event: int
    n_text: int

    @property
    def length(self) -> int:
        return self.n_video + self.n_event + self.n_text

    @property
    def batch(self) -> int:
        return int(self.video_len.shape[0])

    def slices(self):
        a = self.n_video
        b = a + self.n_event
        return slice(0, a), slice(a, b), slice(b, b + self.n_text)

    def valid(self) -> Tensor:
        """(B, L) True for non-padding positions."""
        def part(lengths, width):
            return torch.arange(width).unsqueeze(0) < lengths.unsqueeze(1)

        return torch.cat(
            [part(self.video_len, self.n_video), part(self.event_len, self.n_event), part(self.text_len, self.n_text)],
            dim=1,
        )

    def stream_ids(self) -> Tensor:
        return torch.cat(
            [torch.full((self.n_video,), VIDEO), torch.full((self.n_event,), EVENT), torch.full((self.n_text,), TEXT)]
        )


def base_mask(layout: Layout) -> Tensor:
    valid = layout.valid()
    return valid.unsqueeze(2) & valid.unsqueeze(1)


def build_caption_mask(layout: Layout, current_event: Tensor) -> Tensor:
    """Block every event other than ``current_event`` as a key for all queries.

    ``current_event`` holds one 0-based event index per sample. Blocked events
    still attend to themselves so their rows are well-defined, but nothing
    else reads them.
    """
    current_event = torch.as_tensor(current_event).reshape(-1)
    n_events = layout.event_len - 1
    if ((current_event < 0) | (current_event >= n_events)).any():
        raise IndexError("current event index out of range")
    mask = base_mask(layout)
    off = layout.n_video
    rows = torch.arange(layout.n_event)
    # event rows 1..M excluding the current one
    other = (rows.unsqueeze(0) >= 1) & (rows.unsqueeze(0) != current_event.unsqueeze(1) + 1)
    other_cols = torch.zeros(layout.batch, layout.length, dtype=torch.bool)
    other_cols[:, off : off + layout.n_event] = other
    eye = torch.eye(layout.length, dtype=torch.bool).unsqueeze(0)
    return mask & ~(other_cols.unsqueeze(1) & ~eye)


def build_causal_mask(layout: Layout, stream: int) -> Tensor:
    """Unidirectional mask over the ``stream`` (EVENT or TEXT) block.

    Inside the stream a query sees keys at or before its own position.
    Queries outside the stream never see stream keys, so future items cannot
    leak back through video or event rows.
    """
    if stream not in (EVENT, TEXT):
        raise ValueError("causal masking applies to the event or text stream")
    mask = base_mask(layout)
    in_stream = layout.stream_ids() == stream
    if not in_stream.any():
        return mask
    idx = torch.arange(layout.length)
    causal = idx.unsqueeze(1) >= idx.unsqueeze(0)
    q_in = in_stream.unsqueeze(1)
    k_in = in_stream.unsqueeze(0)
    allow = torch.where(k_in, q_in & causal, torch.ones_like(causal))
    return mask & allow.unsqueeze(0)


class EncoderLayer(nn.Module):
    """Post-norm self-attention block with a GELU feed-forward."""

    def __init__(self, hidden: int, heads: int, ffn_mult: int = 4, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.proj = nn.Linear(hidden, hidden)
        self.norm1 = nn.LayerNorm(hidden)
        self.ff1 = nn.Linear(hidden, ffn_mult * hidden)
        self.ff2 = nn.Linear(ffn_mult * hidden, hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        a = multi_head_attention(q, k, v, mask, self.heads)
        x = self.norm1(x + self.drop(self.proj(a)))
        return self.norm2(x + self.drop(self.ff2(F.gelu(self.ff1(x)))))


@dataclass
class ModalityStreams:
    video: Tensor
    events: Tensor
    text: Tensor
    layout: Layout

    def joint(self) -> Tensor:
        return torch.cat([self.video, self.events, self.text], dim=1)


class DenseCaptioner(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = c = config
        H = c.hidden
        self.video_embed = nn.Linear(c.feature_dim, H)
        self.video_pos = nn.Embedding(c.max_frames, H)
        self.event_embed = nn.Linear(c.max_frames, H)
        # start row + max_events events + one trailing generation slot
        self.event_pos = nn.Embedding(c.max_events + 2, H)
        self.start_event = nn.Parameter(torch.zeros(H))
        self.word_embed = nn.Embedding(c.vocab_size, H)
        self.text_pos = nn.Embedding(c.max_text_len, H)
        self.modality = nn.Embedding(3, H)

        def stack(n):
            return nn.ModuleList(EncoderLayer(H, c.heads, c.ffn_mult, c.dropout) for _ in range(n))

        self.video_encoder = stack(c.video_layers)
        self.event_encoder = stack(c.event_layers)
        self.text_encoder = stack(c.text_layers)
        self.cross_encoder = stack(c.cross_layers)

        self.mlm_bias = nn.Parameter(torch.zeros(c.vocab_size))
        self.mlm_out = None if c.tie_mlm else nn.Linear(H, c.vocab_size)
        self.mvfr_bias = nn.Parameter(torch.zeros(c.feature_dim))
        self.mefm_out = nn.Linear(H, c.max_frames + 1)

        for emb in (self.video_pos, self.event_pos, self.word_embed, self.text_pos, self.modality):
            nn.init.normal_(emb.weight, std=0.02)
        nn.init.normal_(self.start_event, std=0.02)

    # --- embedding -----------------------------------------------------

    def embed_streams(self, video, video_len, events, event_len, text=None, text_len=None) -> ModalityStreams:
        """Project each modality to the hidden size and tag it.

        video: (B, N, D) frame features; events: (B, M, max_frames) binary
        event vectors (zero-padded past each video's frame count); text:
        (B, S) token ids or None. ``event_len`` counts real events only.
        """
        c = self.config
        B, N, D = video.shape
        if D != c.feature_dim:
            raise ValueError(f"feature dim {D} != configured {c.feature_dim}")
        if N > c.max_frames:
            raise ValueError(f"{N} frames exceeds max_frames={c.max_frames}")
        M = events.shape[1]
        if events.shape[-1] != c.max_frames:
            raise ValueError(f"event vectors must have length max_frames={c.max_frames}")
        if M + 1 > c.max_events + 2:
            raise ValueError(f"{M} event slots exceeds max_events={c.max_events}")
        video_h = self.video_embed(video) + self.modality.weight[VIDEO]
        if c.video_positions:
            video_h = video_h + self.video_pos.weight[:N]
        start = self.start_event.expand(B, 1, -1)
        ev = torch.cat([start, self.event_embed(events)], dim=1)
        event_h = ev + self.modality.weight[EVENT] + self.event_pos.weight[: M + 1]
        if text is None:
            text_h = video_h.new_zeros(B, 0, c.hidden)
            text_len = torch.zeros(B, dtype=torch.long)
        else:
            S = text.shape[1]
            if S > c.max_text_len:
                raise ValueError(f"text length {S} exceeds max_text_len={c.max_text_len}")
            text_h = self.word_embed(text) + self.text_pos.weight[:S] + self.modality.weight[TEXT]
        layout = Layout(
            video_len=torch.as_tensor(video_len, dtype=torch.long),
            event_len=torch.as_tensor(event_len, dtype=torch.long) + 1,
            text_len=torch.as_tensor(text_len, dtype=torch.long),
            n_video=N,
            n_event=M + 1,
            n_text=text_h.shape[1],
        )
        return ModalityStreams(video_h, event_h, text_h, layout)

    # --- encoding ------------------------------------------------------

    def encode(self, streams: ModalityStreams, mask: Tensor) -> Tensor:
        layout = streams.layout
        L = layout.length
        if mask.shape[-2:] != (L, L):
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match joint length {L}")
        if mask.dim() == 2:
            mask = mask.unsqueeze(0).expand(layout.batch, L, L)
        parts = []
        for sl, x, layers in zip(
            layout.slices(),
            (streams.video, streams.events, streams.text),
            (self.video_encoder, self.event_encoder, self.text_encoder),
        ):
            sub = mask[:, sl, sl]
            for layer in layers:
                x = layer(x, sub)
            parts.append(x)
        h = torch.cat(parts, dim=1)
        for layer in self.cross_encoder:
            h = layer(h, mask)
        return h

    # --- heads -----------------------------------------------------------

    def mlm_head(self, h: Tensor) -> Tensor:
        if self.mlm_out is None:
            return h @ self.word_embed.weight.t() + self.mlm_bias
        return self.mlm_out(h)

    def mvfr_head(self, h: Tensor) -> Tensor:
        # reuses the video embedding weight, transposed
        return h @ self.video_embed.weight + self.mvfr_bias

    def mefm_head(self, h: Tensor, n_frames: int | None = None) -> tuple[Tensor, Tensor]:
        """Per-frame logits (first ``n_frames``) and the stop logit."""
        out = self.mefm_out(h)
        n = self.config.max_frames if n_frames is None else n_frames
        return out[..., :n], out[..., self.config.max_frames]

    def text_parameter_names(self) -> list[str]:
        """Parameters reachable only through the text stream."""
        names = ["word_embed.weight", "text_pos.weight", "mlm_bias"]
        names += [n for n, _ in self.named_parameters() if n.startswith(("text_encoder.", "mlm_out."))]
        return names

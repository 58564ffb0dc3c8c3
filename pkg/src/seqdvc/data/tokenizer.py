from __future__ import annotations

import json
import re
from collections import Counter
from pathlib import Path
from typing import Iterable

PAD, SOS, EOS, MASK, UNK = "[PAD]", "[SOS]", "[EOS]", "[MASK]", "[UNK]"
SPECIALS = (PAD, SOS, EOS, MASK, UNK)
PAD_ID, SOS_ID, EOS_ID, MASK_ID, UNK_ID = range(len(SPECIALS))

_TOKEN = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(sentence: str) -> list[str]:
    """Lowercase, then split on whitespace and around punctuation."""
    return _TOKEN.findall(sentence.lower())


def detokenize(tokens: Iterable[str]) -> str:
    out = ""
    for tok in tokens:
        if out and tok[0].isalnum():
            out += " "
        out += tok
    return out


class Vocab:
    """Word <-> id mapping with the five special tokens at ids 0-4."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        for w in words:
            if w not in SPECIALS:
                self.itos.append(w)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate words in vocabulary")

    @classmethod
    def build(cls, sentences: Iterable[str], min_freq: int = 1) -> "Vocab":
        counts = Counter(tok for s in sentences for tok in tokenize(s))
        words = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
        return cls(words)

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def first_word_id(self) -> int:
        return len(SPECIALS)

    def encode(self, sentence: str) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokenize(sentence)]

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i < len(SPECIALS):
                continue
            words.append(self.itos[i])
        return detokenize(words)

    def to_json(self) -> dict:
        return {"format_version": 1, "words": self.itos[len(SPECIALS):]}

    @classmethod
    def from_json(cls, d: dict) -> "Vocab":
        if d.get("format_version") != 1:
            raise ValueError("unsupported vocabulary format")
        return cls(d["words"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.from_json(json.loads(Path(path).read_text()))

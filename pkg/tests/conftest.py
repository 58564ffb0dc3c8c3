import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    from seqdvc.data.synthetic import SyntheticSpec, generate_synthetic_corpus

    return generate_synthetic_corpus(SyntheticSpec(n_videos=6, n_frames=16, min_event_frames=2, seed=7))


@pytest.fixture(scope="session")
def tiny_setup(tiny_corpus):
    """(vocab, config, prepared videos) for a small model."""
    from seqdvc.batching import prepare
    from seqdvc.data.tokenizer import Vocab
    from seqdvc.model import ModelConfig

    vocab = Vocab.build(s for r in tiny_corpus for s in r.sentences)
    cfg = ModelConfig(feature_dim=16, vocab_size=len(vocab), hidden=32, heads=4, cross_layers=2, max_frames=16)
    return vocab, cfg, prepare(tiny_corpus, vocab, cfg)


# --- acceptance reporting ---------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``acceptance(k, ok, detail)`` records one result line and fails the test if not ok."""

    def record(k: int, ok: bool, detail: str) -> None:
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[k] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])

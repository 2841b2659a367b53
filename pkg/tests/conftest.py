from __future__ import annotations

import pytest

from treechunk.backends import MockBackend
from treechunk.baselines import BagOfWordsEmbedder
from treechunk.textproc import Sentence


def make_sentences(token_counts, prefix="w"):
    """Sentences with exact whitespace token counts (words are distinct per sentence)."""
    sentences = []
    for i, count in enumerate(token_counts):
        text = " ".join(f"{prefix}{i}x{j}" for j in range(count))
        sentences.append(Sentence(id=i + 1, text=text, char_len=len(text), token_len=count))
    return sentences


@pytest.fixture
def bow_embedder():
    return BagOfWordsEmbedder()


@pytest.fixture
def mock_backend():
    return MockBackend()

"""Reference chunkers: fixed-size packing and embedding-similarity splitting.

Also home to the ``Embedder`` interface, which query-time ranking reuses.
The built-in bag-of-words embedder is deterministic and dependency-free so
every pipeline stage can be tested hermetically.
"""

from __future__ import annotations

import hashlib
import os
import re
from typing import Protocol, Sequence

import numpy as np

from .errors import BackendError, ConfigError
from .textproc import Sentence
from .tree import DEFAULT_UNIT_SIZE, ChunkPoint, RetrievalUnit, build_tree, fixed_size_split

DEFAULT_BREAKPOINT_PERCENTILE = 10.0

_WORD_RE = re.compile(r"[a-z0-9]+")


class Embedder(Protocol):
    """Batch text embedder; output row count equals input length."""

    name: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class BagOfWordsEmbedder:
    """Deterministic test embedder: hashed bag-of-words counts.

    Word buckets come from a stable md5 hash, so vectors are identical across
    runs and platforms. Texts with disjoint vocabularies embed into disjoint
    buckets (barring hash collisions) and so have cosine similarity zero.
    """

    def __init__(self, dimension: int = 512):
        self.name = "bow"
        self.dimension = dimension

    def bucket(self, word: str) -> int:
        digest = hashlib.md5(word.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            for word in _WORD_RE.findall(text.lower()):
                out[row, self.bucket(word)] += 1.0
        return out


class HttpEmbedder:
    """Embedding-service client speaking the common ``{"input": [...]}`` shape."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env: str,
        *,
        dimension: int = 1024,
        timeout: float = 60.0,
        session=None,
    ):
        if not endpoint:
            raise ConfigError("http embedder requires an endpoint URL")
        token = os.environ.get(credential_env or "")
        if not token:
            raise ConfigError(
                f"credential environment variable {credential_env!r} is not set"
            )
        if session is None:
            import requests

            session = requests.Session()
        self.name = f"http:{model}"
        self.dimension = dimension
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self._session = session
        self._token = token

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        headers = {"Authorization": f"Bearer {self._token}"}
        try:
            response = self._session.post(
                self.endpoint,
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            rows = [item["embedding"] for item in response.json()["data"]]
        except Exception as exc:
            raise BackendError(f"embedding request failed: {exc!r}") from exc
        if len(rows) != len(texts):
            raise BackendError(
                f"embedding service returned {len(rows)} rows for {len(texts)} inputs"
            )
        return np.asarray(rows, dtype=np.float64)


def cosine_matrix(query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Cosine similarity of one vector against each row; zero vectors score 0."""
    qn = float(np.linalg.norm(query))
    norms = np.linalg.norm(rows, axis=1)
    denom = qn * norms
    out = np.zeros(len(rows), dtype=np.float64)
    ok = denom > 0
    out[ok] = (rows[ok] @ query) / denom[ok]
    return out


def fixed_chunk(
    sentences: list[Sentence], size: int = DEFAULT_UNIT_SIZE, *, doc_id: str = "doc"
) -> list[RetrievalUnit]:
    """Greedy fixed-size packing over the whole document (no tree boundaries).

    Units link to the single level-1 leaf of a degenerate tree. The default
    size of 200 tokens gives the standard fixed-chunking baseline.
    """
    tree = build_tree(sentences, [], doc_id=doc_id)
    return fixed_size_split(tree, size)


def semantic_boundaries(
    sentences: list[Sentence],
    embedder: Embedder,
    breakpoint_percentile: float = DEFAULT_BREAKPOINT_PERCENTILE,
) -> list[int]:
    """Sentence ids where a new semantic span begins (always includes 1).

    A boundary opens before sentence i+1 when cos(sent_i, sent_i+1) falls
    strictly below the breakpoint percentile of all adjacent similarities.
    Percentile 100 admits every gap, so no boundaries are produced.
    """
    if len(sentences) < 2:
        raise ValueError("semantic chunking requires at least two sentences")
    if not 0 < breakpoint_percentile <= 100:
        raise ValueError("breakpoint_percentile must be in (0, 100]")
    embeddings = embedder.embed([s.text for s in sentences])
    sims = np.array(
        [
            float(cosine_matrix(embeddings[i], embeddings[i + 1 : i + 2])[0])
            for i in range(len(sentences) - 1)
        ]
    )
    boundaries = [1]
    if breakpoint_percentile >= 100:
        return boundaries
    threshold = float(np.percentile(sims, breakpoint_percentile))
    for i, sim in enumerate(sims):
        if sim < threshold:
            boundaries.append(i + 2)
    return boundaries


def semantic_chunk_with_tree(
    sentences: list[Sentence],
    embedder: Embedder,
    breakpoint_percentile: float = DEFAULT_BREAKPOINT_PERCENTILE,
    *,
    doc_id: str = "doc",
):
    """Semantic chunking returning both the span tree and its units."""
    boundaries = semantic_boundaries(sentences, embedder, breakpoint_percentile)
    points = [ChunkPoint(b, 1, False) for b in boundaries]
    tree = build_tree(sentences, points, doc_id=doc_id)
    units = []
    for order, leaf in enumerate(tree.leaves()):
        units.append(
            RetrievalUnit(
                unit_id=f"u{order}",
                text=tree.span_text(leaf.start_sentence, leaf.end_sentence),
                token_len=leaf.token_len,
                leaf_node=leaf.node_id,
                doc_order=order,
                start_sentence=leaf.start_sentence,
                end_sentence=leaf.end_sentence,
            )
        )
    return tree, units


def semantic_chunk(
    sentences: list[Sentence],
    embedder: Embedder,
    breakpoint_percentile: float = DEFAULT_BREAKPOINT_PERCENTILE,
    *,
    doc_id: str = "doc",
) -> list[RetrievalUnit]:
    """Split at embedding-similarity breakpoints; each span becomes one unit."""
    _, units = semantic_chunk_with_tree(
        sentences, embedder, breakpoint_percentile, doc_id=doc_id
    )
    return units

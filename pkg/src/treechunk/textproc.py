"""Sentence segmentation, token accounting, and the numbered-line wire format.

Sentences are the coordinate system for everything downstream: chunk points,
tree node ranges, and evidence references are all expressed in 1-based
sentence ids.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .errors import EmptyInputError, UnknownTokenizerError

DEFAULT_TOKENIZER = "whitespace"
DEFAULT_MAX_SENTENCE_CHARS = 100

# Words that end with '.' without ending a sentence. Compared lowercase,
# with the trailing period stripped.
ABBREVIATIONS = frozenset(
    {
        "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc",
        "e.g", "i.e", "cf", "fig", "eq", "no", "inc", "ltd", "co", "corp",
        "al", "approx",
    }
)

# Terminal punctuation (optionally followed by closing quotes/brackets),
# then whitespace, then an uppercase letter or digit.
_BOUNDARY_RE = re.compile(r"[.!?]+[\"'”’)\]]*\s+(?=[A-Z0-9])")
_LAST_WORD_RE = re.compile(r"([^\s]+)$")


@dataclass(frozen=True)
class Sentence:
    """One numbered sentence; ids run 1..N in document order."""

    id: int
    text: str
    char_len: int
    token_len: int


@dataclass(frozen=True)
class TokenizerHandle:
    """A named token-counting function."""

    name: str
    count: Callable[[str], int]


_TOKENIZERS: dict[str, TokenizerHandle] = {}


def register_tokenizer(name: str, count: Callable[[str], int]) -> TokenizerHandle:
    """Register a token counter under ``name`` and return its handle."""
    handle = TokenizerHandle(name=name, count=count)
    _TOKENIZERS[name] = handle
    return handle


def get_tokenizer(name: str) -> TokenizerHandle:
    try:
        return _TOKENIZERS[name]
    except KeyError:
        raise UnknownTokenizerError(f"unknown tokenizer: {name!r}") from None


register_tokenizer(DEFAULT_TOKENIZER, lambda text: len(text.split()))


def token_len(text: str, tokenizer: str | TokenizerHandle = DEFAULT_TOKENIZER) -> int:
    """Count tokens in ``text`` under the given tokenizer (default: whitespace words)."""
    handle = tokenizer if isinstance(tokenizer, TokenizerHandle) else get_tokenizer(tokenizer)
    return handle.count(text)


def _is_abbreviation(prefix: str) -> bool:
    m = _LAST_WORD_RE.search(prefix)
    if not m:
        return False
    word = m.group(1).rstrip(".!?\"'”’)]").lower()
    return word in ABBREVIATIONS


def _split_line(line: str) -> list[str]:
    """Split one whitespace-normalized line at sentence boundaries."""
    pieces = []
    start = 0
    for m in _BOUNDARY_RE.finditer(line):
        # Boundary position: after the punctuation run, before the whitespace.
        punct_end = m.start() + len(m.group().rstrip())
        if _is_abbreviation(line[: punct_end]):
            continue
        piece = line[start:punct_end].strip()
        if piece:
            pieces.append(piece)
        start = m.end()
    tail = line[start:].strip()
    if tail:
        pieces.append(tail)
    return pieces


def _hard_split(text: str, limit: int) -> list[str]:
    """Split an over-long sentence at the last whitespace before ``limit``."""
    parts = []
    rest = text
    while len(rest) > limit:
        cut = rest.rfind(" ", 1, limit + 1)
        if cut <= 0:
            cut = limit
            parts.append(rest[:cut])
            rest = rest[cut:]
        else:
            parts.append(rest[:cut])
            rest = rest[cut + 1 :]
        rest = rest.strip()
    if rest:
        parts.append(rest)
    return parts


def split_sentences(
    raw_text: str,
    max_sentence_chars: int = DEFAULT_MAX_SENTENCE_CHARS,
    tokenizer: str | TokenizerHandle = DEFAULT_TOKENIZER,
) -> list[Sentence]:
    """Split ``raw_text`` into numbered sentences.

    Boundaries are newlines and terminal punctuation (``. ! ?``) followed by
    whitespace and an uppercase letter or digit, with an abbreviation
    stop-list. Sentences longer than ``max_sentence_chars`` are hard-split at
    the last whitespace before the limit (or at the limit when there is no
    whitespace). Whitespace runs are collapsed; all non-whitespace characters
    are preserved in order.
    """
    if max_sentence_chars < 20:
        raise ValueError(f"max_sentence_chars must be >= 20, got {max_sentence_chars}")
    if not raw_text or not raw_text.strip():
        raise EmptyInputError("document contains no non-whitespace text")

    handle = tokenizer if isinstance(tokenizer, TokenizerHandle) else get_tokenizer(tokenizer)

    texts: list[str] = []
    for line in raw_text.splitlines():
        line = " ".join(line.split())
        if not line:
            continue
        for piece in _split_line(line):
            if len(piece) > max_sentence_chars:
                texts.extend(_hard_split(piece, max_sentence_chars))
            else:
                texts.append(piece)

    return [
        Sentence(id=i + 1, text=t, char_len=len(t), token_len=handle.count(t))
        for i, t in enumerate(texts)
    ]


def format_numbered_lines(sentences: Iterable[Sentence], id_offset: int = 0) -> str:
    """Render sentences as ``<local id> @ <text>`` lines.

    ``id_offset`` maps a window-local line number back to its document id:
    local id = document id - id_offset, so a window starting at document
    sentence 41 uses ``id_offset=40`` and renders its first line as ``1 @ ...``.
    """
    sentences = list(sentences)
    if not sentences:
        raise ValueError("format_numbered_lines requires at least one sentence")
    return "\n".join(f"{s.id - id_offset} @ {s.text}" for s in sentences)


_NUMBERED_LINE_RE = re.compile(r"^(\d+) @ (.*)$")


def parse_numbered_lines(text: str) -> list[tuple[int, str]]:
    """Parse ``<id> @ <text>`` lines back into (id, text) pairs."""
    pairs = []
    for line in text.splitlines():
        m = _NUMBERED_LINE_RE.match(line)
        if m:
            pairs.append((int(m.group(1)), m.group(2)))
    return pairs


def read_documents(path: str | Path) -> list[tuple[str, str]]:
    """Load documents as (doc_id, text) pairs.

    ``path`` may be a UTF-8 plain-text file (doc_id = file stem), a JSONL
    file with ``{"doc_id": ..., "text": ...}`` records, or a directory of
    such files.
    """
    path = Path(path)
    if path.is_dir():
        docs: list[tuple[str, str]] = []
        for child in sorted(path.iterdir()):
            if child.suffix in {".txt", ".jsonl"}:
                docs.extend(read_documents(child))
        return docs
    if path.suffix == ".jsonl":
        docs = []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                if "doc_id" not in record or "text" not in record:
                    raise ValueError(f"{path}:{lineno}: expected doc_id and text fields")
                docs.append((str(record["doc_id"]), record["text"]))
        return docs
    return [(path.stem, path.read_text(encoding="utf-8"))]

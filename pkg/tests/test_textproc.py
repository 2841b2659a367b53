from __future__ import annotations

import random

import pytest

from treechunk.errors import EmptyInputError, UnknownTokenizerError
from treechunk.textproc import (
    Sentence,
    format_numbered_lines,
    parse_numbered_lines,
    read_documents,
    register_tokenizer,
    split_sentences,
    token_len,
)

# Used by the README quickstart; its default-counter token count is frozen below.
README_PARAGRAPH = (
    "Document chunking decides what a retriever can see. A chunk that cuts a "
    "section in half hides the other half from every downstream query, while "
    "a chunk that merges two sections dilutes both. Hierarchical chunking "
    "keeps whole sections recoverable at retrieval time."
)


def test_one_terminal_per_sentence():
    sentences = split_sentences("A. B. C.")
    assert [(s.id, s.text) for s in sentences] == [(1, "A."), (2, "B."), (3, "C.")]


def test_forced_hard_split_without_whitespace():
    sentences = split_sentences("x" * 250, max_sentence_chars=100)
    assert [s.char_len for s in sentences] == [100, 100, 50]


def test_overlong_sentence_splits_at_whitespace():
    # Second sentence is exactly 180 chars of 5-char words: the splitter cuts
    # at the last space before char 100, leaving two pieces <= 100 chars.
    first = "Short one."
    words = ["Abcd" + str(i % 10) for i in range(30)]
    second = " ".join(words)
    assert len(second) == 179
    second += "!"
    sentences = split_sentences(first + " " + second, max_sentence_chars=100)
    assert len(sentences) == 3
    assert sentences[0].text == first
    assert all(s.char_len <= 100 for s in sentences)
    joined = "".join(s.text for s in sentences)
    original = first + " " + second
    assert [c for c in joined if not c.isspace()] == [c for c in original if not c.isspace()]


def test_abbreviations_do_not_split():
    sentences = split_sentences("Dr. Smith arrived. He left at 5 p.m. sharp.")
    assert sentences[0].text == "Dr. Smith arrived."


def test_newlines_are_boundaries():
    sentences = split_sentences("# Heading\nBody sentence one. Body two.")
    assert [s.text for s in sentences] == ["# Heading", "Body sentence one.", "Body two."]


def test_empty_input_raises():
    with pytest.raises(EmptyInputError):
        split_sentences("   \n\t  ")


def test_max_sentence_chars_minimum():
    with pytest.raises(ValueError):
        split_sentences("Fine text.", max_sentence_chars=5)


def test_split_preserves_characters_randomized():
    rng = random.Random(42)
    alphabet = "abc XYZ.!? \n"
    for _ in range(200):
        raw = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 400)))
        if not raw.strip():
            continue
        sentences = split_sentences(raw, max_sentence_chars=40)
        joined = "".join(s.text for s in sentences)
        assert [c for c in joined if not c.isspace()] == [c for c in raw if not c.isspace()]
        assert [s.id for s in sentences] == list(range(1, len(sentences) + 1))
        assert all(s.char_len <= 40 for s in sentences)
        assert all(s.text.strip() for s in sentences)


def test_format_numbered_lines_basic():
    s = Sentence(id=1, text="Intro.", char_len=6, token_len=1)
    assert format_numbered_lines([s]) == "1 @ Intro."


def test_format_numbered_lines_offset_identity():
    sentences = split_sentences("One. Two. Three.")
    rendered = format_numbered_lines(sentences, id_offset=0)
    assert parse_numbered_lines(rendered) == [(s.id, s.text) for s in sentences]


def test_format_numbered_lines_window_offset():
    window = [Sentence(id=41, text="Mid doc.", char_len=8, token_len=2)]
    assert format_numbered_lines(window, id_offset=40) == "1 @ Mid doc."


def test_format_numbered_lines_roundtrip_randomized():
    rng = random.Random(7)
    for _ in range(100):
        n = rng.randint(1, 30)
        sentences = [
            Sentence(id=i + 1, text=f"s{i} body {rng.randint(0, 9)}", char_len=10, token_len=3)
            for i in range(n)
        ]
        offset = rng.randint(0, 5)
        shifted = [
            Sentence(id=s.id + offset, text=s.text, char_len=s.char_len, token_len=s.token_len)
            for s in sentences
        ]
        parsed = parse_numbered_lines(format_numbered_lines(shifted, id_offset=offset))
        assert parsed == [(s.id, s.text) for s in sentences]


def test_format_numbered_lines_rejects_empty():
    with pytest.raises(ValueError):
        format_numbered_lines([])


def test_token_len_whitespace():
    assert token_len("a b c") == 3
    assert token_len("") == 0


def test_token_len_readme_paragraph_frozen():
    # Frozen once from the default counter (cross-checked with `wc -w`).
    assert token_len(README_PARAGRAPH) == 42


def test_token_len_unknown_tokenizer():
    with pytest.raises(UnknownTokenizerError):
        token_len("abc", "no-such-tokenizer")


def test_register_tokenizer():
    handle = register_tokenizer("chars-test", len)
    assert token_len("abcd", "chars-test") == 4
    assert token_len("abcd", handle) == 4


def test_token_concat_monotone_randomized():
    rng = random.Random(3)
    for _ in range(200):
        a = " ".join("w" * rng.randint(1, 3) for _ in range(rng.randint(0, 8)))
        b = " ".join("v" * rng.randint(1, 3) for _ in range(rng.randint(0, 8)))
        assert token_len(a + " " + b) == token_len(a) + token_len(b)
        assert token_len(a + b) <= token_len(a) + token_len(b) + 2


def test_read_documents_text_and_jsonl(tmp_path):
    (tmp_path / "alpha.txt").write_text("Plain text doc.", encoding="utf-8")
    (tmp_path / "more.jsonl").write_text(
        '{"doc_id": "d1", "text": "First."}\n{"doc_id": "d2", "text": "Second."}\n',
        encoding="utf-8",
    )
    docs = dict(read_documents(tmp_path))
    assert docs == {"alpha": "Plain text doc.", "d1": "First.", "d2": "Second."}

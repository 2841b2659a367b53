from __future__ import annotations

import logging
import random
from pathlib import Path

import pytest

from conftest import make_sentences
from treechunk.backends import MockBackend
from treechunk.errors import BackendError, ProgressError
from treechunk.structurer import (
    InferenceConfig,
    ResidualLines,
    build_prompt,
    get_residual_lines,
    group_by_level,
    hierarchical_chunk,
    merge_points,
    parse_chunk_output,
    select_window,
)
from treechunk.textproc import split_sentences
from treechunk.tree import ChunkPoint, serialize_tree, tree_points

DATA = Path(__file__).parent / "data"


# --- select_window -----------------------------------------------------------


def test_select_window_three_fit():
    sentences = make_sentences([10] * 10)
    assert select_window(sentences, 1, 35) == 4


def test_select_window_whole_document():
    sentences = make_sentences([10] * 10)
    assert select_window(sentences, 1, 100) == 11
    assert select_window(sentences, 1, 10_000) == 11


def test_select_window_single_sentence_tail():
    sentences = make_sentences([10] * 10)
    assert select_window(sentences, 9, 10) == 10


def test_select_window_overlong_sentence_admitted_alone():
    sentences = make_sentences([500, 10])
    assert select_window(sentences, 1, 100) == 2


def test_select_window_rejects_bad_start():
    sentences = make_sentences([10] * 3)
    with pytest.raises(ValueError):
        select_window(sentences, 0, 10)
    with pytest.raises(ValueError):
        select_window(sentences, 4, 10)


# --- build_prompt ------------------------------------------------------------


def test_prompt_ends_with_numbered_lines():
    sentences = make_sentences([2, 2])
    prompt = build_prompt(sentences)
    assert prompt.endswith(f"1 @ {sentences[0].text}\n2 @ {sentences[1].text}")


def test_prompt_with_residual_matches_snapshot():
    doc = (DATA / "nested_markers.txt").read_text(encoding="utf-8")
    sentences = split_sentences(doc)
    window = [s for s in sentences if s.id >= 9]
    residual = ResidualLines(entries=((1, "# Alpha"), (2, "## Alpha details")))
    expected = (DATA / "prompt_with_residual.txt").read_text(encoding="utf-8")
    assert build_prompt(window, residual) + "\n" == expected


def test_prompt_empty_residual_equals_none():
    sentences = make_sentences([2, 2])
    assert build_prompt(sentences, ResidualLines(entries=())) == build_prompt(sentences, None)


def test_residual_levels_must_increase():
    with pytest.raises(ValueError):
        ResidualLines(entries=((2, "b"), (1, "a")))


# --- parse_chunk_output ------------------------------------------------------


def test_parse_offset_arithmetic():
    points = parse_chunk_output("1, 1, True\n12, 2, False", 40)
    assert points == [ChunkPoint(41, 1, True), ChunkPoint(52, 2, False)]


def test_parse_skips_garbage_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="treechunk.structurer"):
        points = parse_chunk_output("garbage\n3, 1, True", 0)
    assert points == [ChunkPoint(3, 1, True)]
    assert any("malformed" in r.message for r in caplog.records)


def test_parse_clamps_level_above_max(caplog):
    with caplog.at_level(logging.WARNING, logger="treechunk.structurer"):
        points = parse_chunk_output("2, 9, False", 0, max_levels=4)
    assert points == [ChunkPoint(2, 4, False)]
    assert any("clamping" in r.message for r in caplog.records)


def test_parse_skips_out_of_window_ids():
    points = parse_chunk_output("0, 1, True\n3, 1, True\n9, 1, True", 0, window_len=5)
    assert points == [ChunkPoint(3, 1, True)]


def test_parse_dedupes_first_wins():
    points = parse_chunk_output("4, 1, True\n4, 1, False\n4, 2, False", 0)
    assert points == [ChunkPoint(4, 1, True), ChunkPoint(4, 2, False)]


def test_parse_tolerates_list_dressing():
    points = parse_chunk_output('["1, 1, True", "5, 2, False"]', 0)
    assert points == [ChunkPoint(1, 1, True), ChunkPoint(5, 2, False)]


def test_parse_zero_valid_points():
    assert parse_chunk_output("nothing usable here", 0) == []


# --- merge_points ------------------------------------------------------------


def grouped(*points):
    return group_by_level(sorted(points, key=lambda p: (p.sentence_id, p.level)))


def test_merge_disjoint_is_concatenation():
    g = grouped(ChunkPoint(1, 1), ChunkPoint(10, 2))
    l = grouped(ChunkPoint(20, 1), ChunkPoint(25, 2))
    merged = merge_points(g, l, 20)
    assert merged == {
        1: [ChunkPoint(1, 1), ChunkPoint(20, 1)],
        2: [ChunkPoint(10, 2), ChunkPoint(25, 2)],
    }


def test_merge_overlap_replaces_suffix():
    # Two-window trace: window 2 restarts at 45 and does not re-predict the
    # old point at 50, so the re-prediction removes it.
    g = grouped(ChunkPoint(1, 1), ChunkPoint(45, 1), ChunkPoint(50, 2))
    l = grouped(ChunkPoint(45, 1), ChunkPoint(60, 2))
    merged = merge_points(g, l, 45)
    assert merged == {
        1: [ChunkPoint(1, 1), ChunkPoint(45, 1)],
        2: [ChunkPoint(60, 2)],
    }


def test_merge_empty_local_is_identity_before_start():
    g = grouped(ChunkPoint(1, 1), ChunkPoint(8, 1))
    assert merge_points(g, {}, 20) == g


# --- get_residual_lines ------------------------------------------------------


def test_residual_open_chain():
    sentences = make_sentences([1] * 12)
    g = grouped(ChunkPoint(1, 1), ChunkPoint(4, 2))
    res = get_residual_lines(g, sentences)
    assert res.entries == ((1, sentences[0].text), (2, sentences[3].text))


def test_residual_level1_only():
    sentences = make_sentences([1] * 5)
    res = get_residual_lines(grouped(ChunkPoint(1, 1)), sentences)
    assert res.entries == ((1, sentences[0].text),)


def test_residual_closed_subsection_not_emitted():
    # The level-2 segment at 4 was closed by the level-1 point at 6, so only
    # the open level-1 segment (and its open level-2 at 9) remain.
    sentences = make_sentences([1] * 12)
    g = grouped(ChunkPoint(1, 1), ChunkPoint(4, 2), ChunkPoint(6, 1), ChunkPoint(9, 2))
    res = get_residual_lines(g, sentences)
    assert res.entries == ((1, sentences[5].text), (2, sentences[8].text))


def test_residual_requires_level1():
    with pytest.raises(ValueError):
        get_residual_lines({}, make_sentences([1]))
    with pytest.raises(ValueError):
        get_residual_lines({2: [ChunkPoint(3, 2)]}, make_sentences([1] * 5))


# --- hierarchical_chunk driver ----------------------------------------------


class SpyBackend:
    """Wraps a backend and records every prompt it sees."""

    def __init__(self, inner):
        self.name = "spy"
        self.inner = inner
        self.prompts: list[str] = []

    def generate(self, prompt):
        self.prompts.append(prompt)
        return self.inner.generate(prompt)


def doc_from_lines(lines):
    return split_sentences("\n".join(lines))


def test_single_window_document(mock_backend):
    sentences = doc_from_lines(["# A", "one one one.", "# B", "two two two."])
    stats = {}
    tree = hierarchical_chunk(sentences, mock_backend, stats=stats)
    assert stats["iterations"] == 1
    assert [n.start_sentence for n in map(tree.node, tree.root.children)] == [1, 3]


def test_two_window_restart_overlap(mock_backend):
    # Window 1 (limit 12 tokens) covers sentences 1-4 including "# B": two
    # level-1 points, so window 2 restarts at the last one with no residual.
    lines = ["# A"] + ["alpha body text here."] * 2 + ["# B"] + ["beta body text here."] * 3
    sentences = doc_from_lines(lines)
    spy = SpyBackend(mock_backend)
    config = InferenceConfig(window_token_limit=12)
    stats = {}
    tree = hierarchical_chunk(sentences, spy, config, stats=stats)
    assert stats["windows"][0] == (1, 5)
    assert stats["windows"][1][0] == 4  # restart at LCP1[-1], the "# B" sentence
    assert "Already-decided" not in spy.prompts[1]
    l1_starts = [tree.node(c).start_sentence for c in tree.root.children]
    assert l1_starts == [1, 4]


def test_two_window_residual_advance(mock_backend):
    # Window 1 sees a single level-1 point, so window 2 starts at b and the
    # prompt carries residual lines.
    lines = ["# Alpha"] + ["alpha body text here."] * 3 + ["## Sub"] + ["more body."] * 3
    sentences = doc_from_lines(lines)
    spy = SpyBackend(mock_backend)
    config = InferenceConfig(window_token_limit=13)
    stats = {}
    tree = hierarchical_chunk(sentences, spy, config, stats=stats)
    a2 = stats["windows"][1][0]
    assert a2 == stats["windows"][0][1]  # advanced to b
    assert "Already-decided" in spy.prompts[1]
    assert "[level 1] # Alpha" in spy.prompts[1]
    assert tree.depth() == 2


def test_zero_points_window_synthesizes_level1(caplog):
    class SilentBackend:
        name = "silent"

        def generate(self, prompt):
            return "no structure found"

    sentences = make_sentences([5] * 4)
    with caplog.at_level(logging.WARNING, logger="treechunk.structurer"):
        tree = hierarchical_chunk(sentences, SilentBackend())
    assert any("no valid chunk points" in r.message for r in caplog.records)
    assert len(tree.root.children) == 1


def test_backend_retry_then_success():
    class FlakyBackend:
        name = "flaky"

        def __init__(self):
            self.calls = 0

        def generate(self, prompt):
            self.calls += 1
            if self.calls < 3:
                raise RuntimeError("transient")
            return "1, 1, True"

    backend = FlakyBackend()
    config = InferenceConfig(retry_attempts=3, retry_backoff_s=0.0)
    tree = hierarchical_chunk(make_sentences([5] * 3), backend, config)
    assert backend.calls == 3
    assert len(tree.root.children) == 1


def test_backend_failure_aborts_with_partial_diagnostic():
    class DoomedBackend:
        name = "doomed"

        def __init__(self):
            self.calls = 0

        def generate(self, prompt):
            self.calls += 1
            if self.calls == 1:
                return "1, 1, True"
            raise RuntimeError("down for good")

    sentences = make_sentences([10] * 10)
    config = InferenceConfig(window_token_limit=30, retry_attempts=2, retry_backoff_s=0.0)
    with pytest.raises(BackendError) as excinfo:
        hierarchical_chunk(sentences, DoomedBackend(), config)
    assert excinfo.value.partial_points == [ChunkPoint(1, 1, True)]


def test_coverage_and_determinism_on_random_marker_docs(mock_backend):
    rng = random.Random(99)
    for _ in range(10):
        lines = []
        for _ in range(rng.randint(5, 60)):
            roll = rng.random()
            if roll < 0.1:
                lines.append("# " + " ".join("hw" for _ in range(rng.randint(1, 3))))
            elif roll < 0.2:
                lines.append("## " + "sub heading words"[: rng.randint(3, 10)])
            else:
                lines.append(" ".join("tok" for _ in range(rng.randint(3, 12))) + ".")
        sentences = doc_from_lines(lines)
        config = InferenceConfig(window_token_limit=40)
        tree1 = hierarchical_chunk(sentences, mock_backend, config)
        tree2 = hierarchical_chunk(sentences, mock_backend, config)
        assert serialize_tree(tree1) == serialize_tree(tree2)
        leaves = tree1.leaves()
        covered = [i for l in leaves for i in range(l.start_sentence, l.end_sentence)]
        assert covered == list(range(1, len(sentences) + 1))
        assert any(p.sentence_id == 1 and p.level == 1 for p in tree_points(tree1))


def test_iteration_bound_on_mock_fixture(mock_backend):
    lines = []
    for i in range(40):
        lines.append(f"# h{i}") if i % 8 == 0 else lines.append("body words go here now.")
    sentences = doc_from_lines(lines)
    config = InferenceConfig(window_token_limit=20)
    stats = {}
    hierarchical_chunk(sentences, mock_backend, config, stats=stats)
    total = sum(s.token_len for s in sentences)
    assert stats["iterations"] <= total // (config.window_token_limit // 2) + 4 * 2
    starts = [a for a, _ in stats["windows"]]
    assert starts == sorted(starts)
    assert len(set(starts)) == len(starts)

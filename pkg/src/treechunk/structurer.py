"""Iterative hierarchical structuring of long documents.

Documents longer than one model window are processed in windows: each window
is rendered as numbered lines, the backend proposes chunk points, and local
points are merged into the global set. When a window produces two or more
level-1 points the next window restarts at the last of them (re-predicting
the possibly cut-off segment); otherwise the window advances past its end and
residual lines summarizing the still-open segments anchor the next prompt,
which prevents the level assignment from drifting.
"""

from __future__ import annotations

import logging
import re
import time
from bisect import bisect_right
from dataclasses import dataclass, field

from .backends import GenerationBackend
from .errors import BackendError, ProgressError
from .textproc import Sentence, TokenizerHandle, format_numbered_lines, get_tokenizer
from .tree import DEFAULT_MAX_LEVELS, ChunkPoint, ChunkTree, build_tree

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_TOKEN_LIMIT = 16384

PROMPT_INSTRUCTION = (
    "You are given a text that has been split into sentences. Each line has "
    'the format "{line number} @ {sentence content}". Divide the text into '
    "nested segments based on meaning and formatting. Level 1 segments are "
    "the coarsest units and must each be semantically complete; a larger "
    "level number means a finer segment nested inside the level above it. "
    "For every segment, report the line number of its first sentence, the "
    "segment level, and whether that sentence can serve as the segment's "
    'title. Output one entry per line in the format: "{line number}, '
    '{segment level}, {be a title?}".'
)

_OUTPUT_LINE_RE = re.compile(r"(\d+)\s*,\s*(-?\d+)\s*,\s*([A-Za-z01]+)")
_TRUE_WORDS = {"true", "yes", "1", "t", "y"}
_FALSE_WORDS = {"false", "no", "0", "f", "n"}


@dataclass
class InferenceConfig:
    """Knobs for the windowed inference loop."""

    window_token_limit: int = DEFAULT_WINDOW_TOKEN_LIMIT
    max_levels: int = DEFAULT_MAX_LEVELS
    tokenizer: str = "whitespace"
    decoding: dict = field(default_factory=dict)
    retry_attempts: int = 3
    retry_backoff_s: float = 0.5

    def __post_init__(self):
        if self.window_token_limit < 1:
            raise ValueError("window_token_limit must be >= 1")
        if self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")


@dataclass(frozen=True)
class ResidualLines:
    """One anchor line per still-open level, shallowest first."""

    entries: tuple[tuple[int, str], ...]

    def __post_init__(self):
        levels = [lvl for lvl, _ in self.entries]
        if levels != sorted(set(levels)):
            raise ValueError("residual levels must be strictly increasing")

    def __bool__(self) -> bool:
        return bool(self.entries)


PointsByLevel = dict[int, list[ChunkPoint]]


def select_window(sentences: list[Sentence], a: int, token_limit: int) -> int:
    """Largest exclusive end ``b`` with the window [a, b) within ``token_limit``.

    Always returns b > a: a single over-long sentence is admitted alone.
    """
    n = len(sentences)
    if not 1 <= a <= n:
        raise ValueError(f"window start {a} outside [1, {n}]")
    prefix = [0] * (n + 1)
    for i, s in enumerate(sentences):
        prefix[i + 1] = prefix[i] + s.token_len
    return _window_end(prefix, a, token_limit, n)


def _window_end(prefix: list[int], a: int, token_limit: int, n: int) -> int:
    # Largest b with prefix[b-1] - prefix[a-1] <= limit, clamped to b > a.
    b = bisect_right(prefix, prefix[a - 1] + token_limit)
    return max(a + 1, min(b, n + 1))


def build_prompt(window: list[Sentence], residual: ResidualLines | None = None) -> str:
    """Render the instruction, optional residual context, and numbered lines."""
    if not window:
        raise ValueError("cannot build a prompt over an empty window")
    parts = [PROMPT_INSTRUCTION, ""]
    if residual:
        parts.append("Already-decided open segments from earlier in the document:")
        for level, text in residual.entries:
            parts.append(f"[level {level}] {text}")
        parts.append("")
    parts.append("Text:")
    parts.append(format_numbered_lines(window, id_offset=window[0].id - 1))
    return "\n".join(parts)


def parse_chunk_output(
    raw: str,
    window_offset: int,
    *,
    window_len: int | None = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
) -> list[ChunkPoint]:
    """Parse ``{line}, {level}, {title}`` completions into document-coordinate points.

    Malformed lines are skipped with a warning; out-of-window line numbers are
    skipped; levels above ``max_levels`` are clamped. Points are sorted and
    deduplicated on (sentence_id, level), first occurrence winning.
    """
    points: list[ChunkPoint] = []
    seen: set[tuple[int, int]] = set()
    for line in raw.splitlines():
        if not line.strip():
            continue
        matched = False
        for m in _OUTPUT_LINE_RE.finditer(line):
            local_id, level = int(m.group(1)), int(m.group(2))
            flag = m.group(3).lower()
            if flag in _TRUE_WORDS:
                is_title = True
            elif flag in _FALSE_WORDS:
                is_title = False
            else:
                logger.warning("skipping chunk-output entry with bad title flag: %r", m.group())
                continue
            matched = True
            if local_id < 1 or (window_len is not None and local_id > window_len):
                logger.warning("skipping out-of-window line id %d in %r", local_id, line)
                continue
            if level < 1:
                logger.warning("skipping chunk-output entry with level %d: %r", level, m.group())
                continue
            if level > max_levels:
                logger.warning("clamping level %d to max_levels %d in %r", level, max_levels, line)
                level = max_levels
            key = (local_id + window_offset, level)
            if key in seen:
                continue
            seen.add(key)
            points.append(ChunkPoint(sentence_id=key[0], level=level, is_title=is_title))
        if not matched:
            logger.warning("skipping malformed chunk-output line: %r", line)
    return sorted(points, key=lambda p: (p.sentence_id, p.level))


def group_by_level(points: list[ChunkPoint]) -> PointsByLevel:
    grouped: PointsByLevel = {}
    for p in points:
        grouped.setdefault(p.level, []).append(p)
    return grouped


def flatten_points(grouped: PointsByLevel) -> list[ChunkPoint]:
    return sorted(
        (p for pts in grouped.values() for p in pts),
        key=lambda p: (p.sentence_id, p.level),
    )


def merge_points(
    global_points: PointsByLevel, local_points: PointsByLevel, window_start: int
) -> PointsByLevel:
    """Merge a window's points into the global set.

    Points before ``window_start`` are kept verbatim; the suffix at ids >=
    window_start is replaced wholesale by the window's re-predictions (the
    second pass saw more context).
    """
    merged: PointsByLevel = {}
    for level in sorted(set(global_points) | set(local_points)):
        kept = [p for p in global_points.get(level, []) if p.sentence_id < window_start]
        new = local_points.get(level, [])
        if new and new[0].sentence_id < window_start:
            raise ValueError("local points must live at ids >= window_start")
        rows = kept + new
        if rows:
            merged[level] = rows
    return merged


def get_residual_lines(global_points: PointsByLevel, sentences: list[Sentence]) -> ResidualLines:
    """Anchor lines for the segments still open at the next window start.

    Walks levels from 1 downward: at each level the most recent point nested
    inside the previous level's open segment contributes its sentence text.
    """
    if not global_points.get(1):
        raise ValueError("residual lines require at least one level-1 chunk point")
    entries: list[tuple[int, str]] = []
    cursor = 1
    for level in range(1, max(global_points) + 1):
        candidates = [p for p in global_points.get(level, []) if p.sentence_id >= cursor]
        if not candidates:
            break
        point = candidates[-1]
        entries.append((level, sentences[point.sentence_id - 1].text))
        cursor = point.sentence_id
    return ResidualLines(entries=tuple(entries))


def _generate_with_retry(
    backend: GenerationBackend,
    prompt: str,
    config: InferenceConfig,
    partial: PointsByLevel,
    stats: dict | None,
) -> str:
    last_exc: Exception | None = None
    for attempt in range(config.retry_attempts):
        try:
            started = time.perf_counter()
            raw = backend.generate(prompt)
            if stats is not None:
                stats["backend_seconds"] += time.perf_counter() - started
                stats["backend_calls"] += 1
            return raw
        except Exception as exc:
            last_exc = exc
            logger.warning("backend attempt %d/%d failed: %r", attempt + 1, config.retry_attempts, exc)
            if attempt + 1 < config.retry_attempts and config.retry_backoff_s > 0:
                time.sleep(config.retry_backoff_s * (2**attempt))
    raise BackendError(
        f"backend failed after {config.retry_attempts} attempts: {last_exc!r}; "
        f"partial points cover levels {sorted(partial)}",
        partial_points=flatten_points(partial),
    )


def hierarchical_chunk(
    sentences: list[Sentence],
    backend: GenerationBackend,
    config: InferenceConfig | None = None,
    *,
    doc_id: str = "doc",
    stats: dict | None = None,
) -> ChunkTree:
    """Run windowed inference over a whole document and build its chunk tree.

    ``stats``, when given, is filled with iteration and backend-call counters
    plus windows' start/end trace (useful for timing and tests).
    """
    cfg = config or InferenceConfig()
    if not sentences:
        raise ValueError("cannot chunk an empty document")
    if stats is not None:
        stats.update({"iterations": 0, "backend_calls": 0, "backend_seconds": 0.0, "windows": []})

    n = len(sentences)
    prefix = [0] * (n + 1)
    for i, s in enumerate(sentences):
        prefix[i + 1] = prefix[i] + s.token_len

    global_points: PointsByLevel = {}
    a = 1
    residual: ResidualLines | None = None

    while True:
        b = _window_end(prefix, a, cfg.window_token_limit, n)
        window = sentences[a - 1 : b - 1]
        prompt = build_prompt(window, residual)
        raw = _generate_with_retry(backend, prompt, cfg, global_points, stats)
        points = parse_chunk_output(raw, a - 1, window_len=b - a, max_levels=cfg.max_levels)
        if not points:
            logger.warning(
                "window [%d, %d) produced no valid chunk points; forcing a level-1 "
                "point at the window start",
                a,
                b,
            )
            points = [ChunkPoint(a, 1, False)]
        local_points = group_by_level(points)
        global_points = merge_points(global_points, local_points, a)
        if not any(p.sentence_id == 1 for p in global_points.get(1, [])):
            # The document start always opens a level-1 segment; without it
            # neither residual lines nor the final tree are well-defined.
            logger.warning("no level-1 point at sentence 1 after window [%d, %d); inserting one", a, b)
            global_points.setdefault(1, []).insert(0, ChunkPoint(1, 1, False))
        if stats is not None:
            stats["iterations"] += 1
            stats["windows"].append((a, b))
        if b == n + 1:
            break
        level1 = local_points.get(1, [])
        if len(level1) >= 2:
            new_a = level1[-1].sentence_id
            residual = None
        else:
            new_a = b
            residual = get_residual_lines(global_points, sentences)
        if new_a <= a:
            raise ProgressError(
                f"inference loop failed to advance past sentence {a} (next start {new_a})"
            )
        a = new_a

    return build_tree(
        sentences, flatten_points(global_points), max_levels=cfg.max_levels, doc_id=doc_id
    )

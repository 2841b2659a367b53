"""Metrics and experiment drivers: chunk-point F1, evidence recall, sweeps.

The harness compares chunkers end to end: chunk, rank, assemble a context
under a token budget, then score the fraction of gold evidence sentences the
context actually contains. Chunk-point F1 scores structural accuracy against
manually annotated (or planted) hierarchy points.
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backends import GenerationBackend
from .baselines import Embedder, semantic_chunk_with_tree
from .errors import ConfigError
from .retrieval import AssembledContext, auto_merge, flat_retrieve, rank_units
from .structurer import InferenceConfig, hierarchical_chunk
from .textproc import Sentence
from .tree import (
    ChunkPoint,
    ChunkTree,
    RetrievalUnit,
    build_tree,
    fixed_size_split,
    tree_points,
    truncate_levels,
)

logger = logging.getLogger(__name__)

DEFAULT_SWEEP_BUDGETS = (2048, 2560, 3072, 3584, 4096)

F1_MODES = ("level_1", "level_2", "level_all")


@dataclass(frozen=True)
class GoldStructure:
    """Annotated hierarchy points for one document."""

    doc_id: str
    points: tuple[ChunkPoint, ...]


@dataclass(frozen=True)
class QAItem:
    """A question with gold evidence sentence references."""

    qa_id: str
    doc_id: str
    question: str
    answer: str
    evidence_sentence_ids: tuple[int, ...]
    task_type: str = "T1"

    def __post_init__(self):
        if self.task_type in {"T1", "T2"} and not self.evidence_sentence_ids:
            raise ValueError(f"{self.qa_id}: {self.task_type} items need evidence sentences")


@dataclass
class MetricRow:
    """One line of a results table; unused metrics stay None."""

    method: str
    budget: int | None = None
    evidence_recall: float | None = None
    f1_l1: float | None = None
    f1_l2: float | None = None
    f1_all: float | None = None
    wall_time_s: float | None = None
    n_failures: int = 0

    def __post_init__(self):
        for name in ("evidence_recall", "f1_l1", "f1_l2", "f1_all"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass
class TimingRow:
    """Per-method chunking cost over a document set."""

    method: str
    n_docs: int
    mean_wall_s: float
    mean_backend_s: float
    mean_units: float


def chunk_point_f1(
    predicted: Sequence[ChunkPoint],
    gold: Sequence[ChunkPoint],
    mode: str = "level_all",
) -> dict[str, float]:
    """Precision/recall/F1 of predicted chunk points against gold.

    ``level_1``/``level_2`` restrict both sides to points of that level and
    match on exact sentence id; ``level_all`` matches on sentence id alone,
    ignoring levels. Matching is one-to-one.
    """
    if mode not in F1_MODES:
        raise ValueError(f"mode must be one of {F1_MODES}, got {mode!r}")
    if mode == "level_all":
        pred_keys = [p.sentence_id for p in predicted]
        gold_keys = [g.sentence_id for g in gold]
    else:
        level = 1 if mode == "level_1" else 2
        pred_keys = [p.sentence_id for p in predicted if p.level == level]
        gold_keys = [g.sentence_id for g in gold if g.level == level]
    pc, gc = Counter(pred_keys), Counter(gold_keys)
    matched = sum(min(pc[k], gc[k]) for k in pc)

    def ratio(count: int, total: int, other_total: int) -> float:
        if total == 0:
            return 1.0 if other_total == 0 else 0.0
        return count / total

    precision = ratio(matched, len(pred_keys), len(gold_keys))
    recall = ratio(matched, len(gold_keys), len(pred_keys))
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def evidence_recall(
    context: AssembledContext | str, item: QAItem, sentences: Sequence[Sentence]
) -> float:
    """Fraction of the item's evidence sentences present in the context.

    Matching is by normalized full-sentence containment (lowercase, collapsed
    whitespace), so contexts assembled by any chunker score uniformly. An
    empty evidence list scores 1.0 vacuously, with a warning.
    """
    if not item.evidence_sentence_ids:
        logger.warning("qa item %s has no evidence sentences; recall is vacuously 1.0", item.qa_id)
        return 1.0
    haystack = _normalize(context.text if isinstance(context, AssembledContext) else context)
    hits = 0
    for sid in item.evidence_sentence_ids:
        if not 1 <= sid <= len(sentences):
            raise ValueError(f"qa item {item.qa_id}: evidence sentence id {sid} out of range")
        if _normalize(sentences[sid - 1].text) in haystack:
            hits += 1
    return hits / len(item.evidence_sentence_ids)


@dataclass
class MethodSpec:
    """A parsed method string such as ``fc``, ``sc``, ``hc`` or ``hc+am``."""

    chunker: str
    strategy: str

    @classmethod
    def parse(cls, spec: str) -> "MethodSpec":
        base, _, suffix = spec.partition("+")
        if base not in {"fc", "sc", "hc"}:
            raise ConfigError(f"unknown chunker {base!r} in method {spec!r}")
        if suffix not in {"", "am"}:
            raise ConfigError(f"unknown method suffix {suffix!r} in {spec!r}")
        return cls(chunker=base, strategy="auto_merge" if suffix == "am" else "flat")

    def __str__(self) -> str:
        return self.chunker + ("+am" if self.strategy == "auto_merge" else "")


@dataclass
class ChunkedDoc:
    doc_id: str
    tree: ChunkTree
    units: list[RetrievalUnit]
    wall_s: float = 0.0
    backend_s: float = 0.0


def chunk_document(
    doc_id: str,
    sentences: list[Sentence],
    method: MethodSpec,
    *,
    backend: GenerationBackend | None = None,
    embedder: Embedder | None = None,
    chunk_size: int = 200,
    sc_percentile: float = 10.0,
    inference_config: InferenceConfig | None = None,
) -> ChunkedDoc:
    """Run one chunker over one document, timing the work."""
    started = time.perf_counter()
    backend_s = 0.0
    if method.chunker == "fc":
        tree = build_tree(sentences, [], doc_id=doc_id)
        units = fixed_size_split(tree, chunk_size)
    elif method.chunker == "sc":
        if embedder is None:
            raise ConfigError("semantic chunking requires an embedder")
        tree, units = semantic_chunk_with_tree(sentences, embedder, sc_percentile, doc_id=doc_id)
    elif method.chunker == "hc":
        if backend is None:
            raise ConfigError("hierarchical chunking requires a generation backend")
        stats: dict = {}
        tree = hierarchical_chunk(sentences, backend, inference_config, doc_id=doc_id, stats=stats)
        backend_s = stats.get("backend_seconds", 0.0)
        units = fixed_size_split(tree, chunk_size)
    else:  # pragma: no cover - MethodSpec.parse rejects others
        raise ConfigError(f"unknown chunker {method.chunker!r}")
    wall_s = time.perf_counter() - started
    return ChunkedDoc(doc_id=doc_id, tree=tree, units=units, wall_s=wall_s, backend_s=backend_s)


def assemble(
    chunked: ChunkedDoc,
    question: str,
    budget: int,
    strategy: str,
    embedder: Embedder,
    *,
    ranked=None,
    trace: list | None = None,
) -> AssembledContext:
    ranked = ranked if ranked is not None else rank_units(chunked.units, question, embedder)
    if strategy == "auto_merge":
        return auto_merge(ranked, chunked.tree, budget, trace=trace)
    if strategy == "flat":
        return flat_retrieve(ranked, budget)
    raise ConfigError(f"unknown retrieval strategy {strategy!r}")


def _chunk_all(
    docs: dict[str, list[Sentence]],
    spec: MethodSpec,
    jobs: int,
    **kwargs,
) -> tuple[dict[str, ChunkedDoc], int]:
    """Chunk every document (optionally in parallel); returns results + failure count."""

    def one(item: tuple[str, list[Sentence]]):
        doc_id, sentences = item
        try:
            return doc_id, chunk_document(doc_id, sentences, spec, **kwargs), None
        except Exception as exc:
            return doc_id, None, exc

    items = sorted(docs.items())
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(item) for item in items]
    chunked: dict[str, ChunkedDoc] = {}
    failures = 0
    for doc_id, result, exc in results:
        if exc is not None:
            failures += 1
            logger.error("chunking failed for doc %s with method %s: %r", doc_id, spec, exc)
        else:
            chunked[doc_id] = result
    return chunked, failures


def budget_sweep(
    docs: dict[str, list[Sentence]],
    qa_items: Sequence[QAItem],
    methods: Sequence[str | MethodSpec],
    budgets: Sequence[int] | None = None,
    *,
    embedder: Embedder,
    backend: GenerationBackend | None = None,
    chunk_size: int = 200,
    sc_percentile: float = 10.0,
    inference_config: InferenceConfig | None = None,
    jobs: int = 1,
) -> list[MetricRow]:
    """Evidence recall per (method, budget), averaged over QA items.

    Chunking and ranking run once per (method, document) and are reused
    across budgets. Per-document failures are counted, logged, and excluded
    from the averages.
    """
    budgets = list(budgets) if budgets is not None else list(DEFAULT_SWEEP_BUDGETS)
    specs = [m if isinstance(m, MethodSpec) else MethodSpec.parse(m) for m in methods]
    items = [q for q in qa_items if q.doc_id in docs]
    if not items:
        raise ValueError("no QA items reference the supplied documents")

    rows: list[MetricRow] = []
    for spec in specs:
        chunked, failures = _chunk_all(
            docs, spec, jobs, backend=backend, embedder=embedder,
            chunk_size=chunk_size, sc_percentile=sc_percentile,
            inference_config=inference_config,
        )
        ranked_cache = {
            q.qa_id: rank_units(chunked[q.doc_id].units, q.question, embedder)
            for q in items
            if q.doc_id in chunked
        }
        for budget in budgets:
            recalls = []
            for q in items:
                if q.doc_id not in chunked:
                    continue
                context = assemble(
                    chunked[q.doc_id], q.question, budget, spec.strategy, embedder,
                    ranked=ranked_cache[q.qa_id],
                )
                recalls.append(evidence_recall(context, q, docs[q.doc_id]))
            rows.append(
                MetricRow(
                    method=str(spec),
                    budget=budget,
                    evidence_recall=sum(recalls) / len(recalls) if recalls else None,
                    n_failures=failures,
                )
            )
    return rows


def max_level_ablation(
    tree: ChunkTree,
    qa_items: Sequence[QAItem],
    *,
    embedder: Embedder,
    budget: int = 4096,
    chunk_size: int = 200,
    max_level: int = 4,
) -> dict[str, float]:
    """Evidence recall per maximum-hierarchy-level setting (L1..Lk plus LA).

    Each setting truncates the tree, re-splits its leaves into units, and
    reruns auto-merge retrieval.
    """
    items = [q for q in qa_items if q.doc_id == tree.doc_id]
    if not items:
        raise ValueError(f"no QA items for document {tree.doc_id!r}")
    settings: list[tuple[str, ChunkTree]] = [
        (f"L{d}", truncate_levels(tree, d)) for d in range(1, max_level + 1)
    ]
    settings.append(("LA", tree))
    out: dict[str, float] = {}
    for label, t in settings:
        units = fixed_size_split(t, chunk_size)
        recalls = []
        for q in items:
            ranked = rank_units(units, q.question, embedder)
            context = auto_merge(ranked, t, budget)
            recalls.append(evidence_recall(context, q, tree.sentences))
        out[label] = sum(recalls) / len(recalls)
    return out


def chunking_accuracy(
    docs: dict[str, list[Sentence]],
    gold: dict[str, GoldStructure],
    methods: Sequence[str | MethodSpec],
    *,
    embedder: Embedder | None = None,
    backend: GenerationBackend | None = None,
    chunk_size: int = 200,
    sc_percentile: float = 10.0,
    inference_config: InferenceConfig | None = None,
    jobs: int = 1,
) -> list[MetricRow]:
    """Chunk-point F1 per method, averaged over documents."""
    specs = [m if isinstance(m, MethodSpec) else MethodSpec.parse(m) for m in methods]
    scorable = {doc_id: sentences for doc_id, sentences in docs.items() if doc_id in gold}
    rows = []
    for spec in specs:
        chunked, failures = _chunk_all(
            scorable, spec, jobs, backend=backend, embedder=embedder,
            chunk_size=chunk_size, sc_percentile=sc_percentile,
            inference_config=inference_config,
        )
        scores = {mode: [] for mode in F1_MODES}
        for doc_id in sorted(chunked):
            predicted = tree_points(chunked[doc_id].tree)
            for mode in F1_MODES:
                scores[mode].append(chunk_point_f1(predicted, list(gold[doc_id].points), mode)["f1"])
        if not scores["level_all"]:
            raise ValueError(f"no scorable documents for method {spec}")
        rows.append(
            MetricRow(
                method=str(spec),
                f1_l1=sum(scores["level_1"]) / len(scores["level_1"]),
                f1_l2=sum(scores["level_2"]) / len(scores["level_2"]),
                f1_all=sum(scores["level_all"]) / len(scores["level_all"]),
                n_failures=failures,
            )
        )
    return rows


def timing_report(
    docs: dict[str, list[Sentence]],
    methods: Sequence[str | MethodSpec],
    *,
    embedder: Embedder | None = None,
    backend: GenerationBackend | None = None,
    chunk_size: int = 200,
    sc_percentile: float = 10.0,
    inference_config: InferenceConfig | None = None,
) -> list[TimingRow]:
    """Wall-clock chunking cost per method; backend latency reported separately.

    Runs sequentially on purpose: parallel chunking would contaminate the
    per-document wall-clock numbers.
    """
    specs = [m if isinstance(m, MethodSpec) else MethodSpec.parse(m) for m in methods]
    rows = []
    for spec in specs:
        walls, backends, counts = [], [], []
        for doc_id, sentences in sorted(docs.items()):
            chunked = chunk_document(
                doc_id, sentences, spec, backend=backend, embedder=embedder,
                chunk_size=chunk_size, sc_percentile=sc_percentile,
                inference_config=inference_config,
            )
            walls.append(chunked.wall_s)
            backends.append(chunked.backend_s)
            counts.append(len(chunked.units))
        rows.append(
            TimingRow(
                method=str(spec),
                n_docs=len(walls),
                mean_wall_s=sum(walls) / len(walls),
                mean_backend_s=sum(backends) / len(backends),
                mean_units=sum(counts) / len(counts),
            )
        )
    return rows


def load_qa_items(path: str | Path) -> list[QAItem]:
    """Read QA items from JSONL records."""
    items = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                items.append(
                    QAItem(
                        qa_id=str(record["qa_id"]),
                        doc_id=str(record["doc_id"]),
                        question=record["question"],
                        answer=record.get("answer", ""),
                        evidence_sentence_ids=tuple(record["evidence_sentence_ids"]),
                        task_type=record.get("task_type", "T1"),
                    )
                )
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing QA field {exc}") from exc
    return items


def load_gold_structures(path: str | Path) -> dict[str, GoldStructure]:
    """Read gold hierarchy annotations from JSONL records."""
    out: dict[str, GoldStructure] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                points = tuple(
                    ChunkPoint(int(sid), int(level), bool(title))
                    for sid, level, title in record["points"]
                )
                out[str(record["doc_id"])] = GoldStructure(doc_id=str(record["doc_id"]), points=points)
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed gold record: {exc!r}") from exc
    return out

"""Synthetic corpus generator with planted structure and dense evidence.

Documents are built from marker-prefixed headings ("#", "##", "###") and
topical body sentences, so the planted hierarchy doubles as gold annotation
and is recoverable exactly by the marker-driven mock backend. QA items plant
evidence as a contiguous run of sentences covering a sizable share of one
section, the regime where chunk boundaries actually matter.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .evalharness import GoldStructure, QAItem
from .textproc import Sentence, split_sentences
from .tree import ChunkPoint

_CONSONANTS = "bcdfghjklmnpqrstvwz"
_VOWELS = "aeiou"


@dataclass
class SynthDoc:
    doc_id: str
    text: str
    sentences: list[Sentence]
    gold: GoldStructure


@dataclass
class SynthCorpus:
    docs: list[SynthDoc]
    qa_items: list[QAItem]

    def doc_map(self) -> dict[str, list[Sentence]]:
        return {d.doc_id: d.sentences for d in self.docs}

    def gold_map(self) -> dict[str, GoldStructure]:
        return {d.doc_id: d.gold for d in self.docs}


def _word(rng: random.Random) -> str:
    # 2-3 syllables keeps the longest generated sentence under the 100-char
    # split limit, preserving the 1:1 line-to-sentence mapping.
    n = rng.randint(2, 3)
    return "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(n))


def _vocab(rng: random.Random, size: int) -> list[str]:
    words = set()
    while len(words) < size:
        words.add(_word(rng))
    return sorted(words)


@dataclass
class _Section:
    title_line: int  # 0-based index into the line list
    level: int
    topic: list[str]
    body_lines: list[int]


def generate_document(
    rng: random.Random,
    doc_id: str,
    *,
    n_sections: int = 12,
    subsections_per_section: tuple[int, int] = (3, 4),
    block_sentences: tuple[int, int] = (12, 18),
    words_per_sentence: tuple[int, int] = (8, 12),
    topical_share: float = 0.55,
    quiet_share: float = 0.03,
    filler_vocab_size: int = 120,
    topic_pool_size: int = 72,
    topic_vocab_size: int = 16,
) -> tuple[SynthDoc, list[_Section]]:
    """One document with planted two-level structure.

    Section topics are sampled from a shared pool, so sections partially
    share vocabulary and compete at ranking time. Each subsection is a
    topical block, then a quiet near-filler stretch, then another topical
    block: the quiet middle barely matches any query lexically even though
    it belongs to the same semantic unit.
    """
    filler = _vocab(rng, filler_vocab_size)
    pool = _vocab(rng, topic_pool_size)
    lines: list[str] = []
    sections: list[_Section] = []

    def body_sentence(topic: list[str], share: float) -> str:
        n_words = rng.randint(*words_per_sentence)
        words = []
        for _ in range(n_words):
            if rng.random() < share:
                words.append(rng.choice(topic))
            else:
                words.append(rng.choice(filler))
        return " ".join(words) + "."

    for si in range(n_sections):
        topic = rng.sample(pool, topic_vocab_size)
        lines.append(f"# {' '.join(rng.sample(topic, 3))}")
        section = _Section(title_line=len(lines) - 1, level=1, topic=topic, body_lines=[])
        sections.append(section)
        for _ in range(rng.randint(*subsections_per_section)):
            subtopic = rng.sample(topic, max(4, topic_vocab_size // 2))
            lines.append(f"## {' '.join(rng.sample(subtopic, 2))}")
            sub = _Section(title_line=len(lines) - 1, level=2, topic=subtopic, body_lines=[])
            sections.append(sub)
            for share in (topical_share, quiet_share, topical_share):
                for _ in range(rng.randint(*block_sentences)):
                    lines.append(body_sentence(subtopic, share))
                    sub.body_lines.append(len(lines) - 1)
                    section.body_lines.append(len(lines) - 1)

    text = "\n".join(lines)
    sentences = split_sentences(text)
    if len(sentences) != len(lines):
        raise AssertionError(
            f"generator produced {len(lines)} lines but {len(sentences)} sentences"
        )
    points = tuple(
        ChunkPoint(s.title_line + 1, s.level, True) for s in sections
    )
    gold = GoldStructure(doc_id=doc_id, points=points)
    return SynthDoc(doc_id=doc_id, text=text, sentences=sentences, gold=gold), sections


def generate_corpus(
    seed: int,
    *,
    n_docs: int = 1,
    qa_per_doc: int = 3,
    evidence_share: float = 0.6,
    **doc_kwargs,
) -> SynthCorpus:
    """Deterministic corpus of planted-structure documents plus dense-evidence QA.

    Each QA item targets one level-1 section: the question samples the
    section's topic vocabulary and the evidence is a contiguous run of the
    section's body sentences covering ``evidence_share`` of it (well above
    the 10% density floor for evidence-dense items).
    """
    rng = random.Random(seed)
    docs: list[SynthDoc] = []
    qa_items: list[QAItem] = []
    for di in range(n_docs):
        doc_id = f"synth-{seed}-{di}"
        doc, sections = generate_document(rng, doc_id, **doc_kwargs)
        docs.append(doc)
        top_sections = [s for s in sections if s.level == 1]
        subsections = [s for s in sections if s.level == 2]
        targets = rng.sample(top_sections, min(qa_per_doc, len(top_sections)))
        for qi, section in enumerate(targets):
            body = section.body_lines
            run = max(1, int(len(body) * evidence_share))
            start = rng.randint(0, len(body) - run)
            evidence_lines = body[start : start + run]
            evidence = tuple(line + 1 for line in evidence_lines)
            # The question samples vocabulary from the subsections the
            # evidence actually touches, the way a question about a passage
            # reflects that passage's wording.
            touched = sorted(
                {
                    word
                    for sub in subsections
                    if set(sub.body_lines) & set(evidence_lines)
                    for word in sub.topic
                }
            )
            question = " ".join(rng.sample(touched, min(8, len(touched))))
            qa_items.append(
                QAItem(
                    qa_id=f"{doc_id}-q{qi}",
                    doc_id=doc_id,
                    question=question,
                    answer=" ".join(rng.sample(section.topic, 3)),
                    evidence_sentence_ids=evidence,
                    task_type="T1",
                )
            )
    return SynthCorpus(docs=docs, qa_items=qa_items)


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Write docs.jsonl, qa.jsonl, and gold.jsonl; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "docs": out / "docs.jsonl",
        "qa": out / "qa.jsonl",
        "gold": out / "gold.jsonl",
    }
    with paths["docs"].open("w", encoding="utf-8") as fh:
        for doc in corpus.docs:
            fh.write(json.dumps({"doc_id": doc.doc_id, "text": doc.text}, ensure_ascii=False))
            fh.write("\n")
    with paths["qa"].open("w", encoding="utf-8") as fh:
        for q in corpus.qa_items:
            fh.write(
                json.dumps(
                    {
                        "qa_id": q.qa_id,
                        "doc_id": q.doc_id,
                        "question": q.question,
                        "answer": q.answer,
                        "evidence_sentence_ids": list(q.evidence_sentence_ids),
                        "task_type": q.task_type,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")
    with paths["gold"].open("w", encoding="utf-8") as fh:
        for doc in corpus.docs:
            fh.write(
                json.dumps(
                    {
                        "doc_id": doc.doc_id,
                        "points": [
                            [p.sentence_id, p.level, p.is_title] for p in doc.gold.points
                        ],
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")
    return paths

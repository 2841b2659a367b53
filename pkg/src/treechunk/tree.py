"""Hierarchical document structure built from chunk points.

A chunk point opens a new segment at a sentence; the tree organizes segments
so that each node owns a contiguous half-open sentence range and children
partition their parent exactly. Leaves (childless nodes) are sub-chunked into
fixed-size retrieval units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .errors import SchemaError, TreeError
from .textproc import Sentence

SCHEMA_VERSION = 1
DEFAULT_MAX_LEVELS = 4
DEFAULT_UNIT_SIZE = 200


@dataclass(frozen=True)
class ChunkPoint:
    """A segment start: sentence id, hierarchy level (1 = coarsest), title flag."""

    sentence_id: int
    level: int
    is_title: bool = False


@dataclass
class TreeNode:
    """A tree node owning the half-open sentence range [start, end)."""

    node_id: int
    level: int
    start_sentence: int
    end_sentence: int
    is_title: bool = False
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    token_len: int = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ChunkTree:
    """Immutable-after-build document structure; root is level 0 over [1, N+1)."""

    doc_id: str
    sentences: list[Sentence]
    nodes: dict[int, TreeNode]
    root_id: int = 0

    @property
    def root(self) -> TreeNode:
        return self.nodes[self.root_id]

    @property
    def num_sentences(self) -> int:
        return len(self.sentences)

    @property
    def token_len(self) -> int:
        return self.root.token_len

    def node(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def depth(self) -> int:
        return max(n.level for n in self.nodes.values())

    def leaves(self) -> list[TreeNode]:
        """Childless nodes in document order; they partition [1, N+1)."""
        return sorted((n for n in self.nodes.values() if n.is_leaf), key=lambda n: n.start_sentence)

    def span_text(self, start: int, end: int) -> str:
        return " ".join(s.text for s in self.sentences[start - 1 : end - 1])

    def span_token_len(self, start: int, end: int) -> int:
        return sum(s.token_len for s in self.sentences[start - 1 : end - 1])


@dataclass(frozen=True)
class RetrievalUnit:
    """A fixed-size sub-chunk of one tree leaf; the atom of ranking."""

    unit_id: str
    text: str
    token_len: int
    leaf_node: int
    doc_order: int
    start_sentence: int
    end_sentence: int


def _clean_points(points: Iterable[ChunkPoint], num_sentences: int, max_levels: int) -> list[ChunkPoint]:
    seen: set[tuple[int, int]] = set()
    cleaned: list[ChunkPoint] = []
    for p in sorted(points, key=lambda p: (p.sentence_id, p.level)):
        if not 1 <= p.sentence_id <= num_sentences:
            raise TreeError(
                f"chunk point sentence_id {p.sentence_id} outside [1, {num_sentences}]"
            )
        if not 1 <= p.level <= max_levels:
            raise TreeError(f"chunk point level {p.level} outside [1, {max_levels}]")
        key = (p.sentence_id, p.level)
        if key in seen:
            continue
        seen.add(key)
        cleaned.append(p)
    if not any(p.sentence_id == 1 and p.level == 1 for p in cleaned):
        cleaned.insert(0, ChunkPoint(1, 1, False))
    return cleaned


def build_tree(
    sentences: list[Sentence],
    points: Iterable[ChunkPoint],
    *,
    max_levels: int = DEFAULT_MAX_LEVELS,
    doc_id: str = "doc",
) -> ChunkTree:
    """Build a chunk tree from sorted chunk points.

    A level-L point at sentence s closes every open node at level >= L and
    opens a new level-L node at s. Skipped levels synthesize intermediate
    nodes, and a first child that starts after its parent synthesizes a
    leading sibling covering the gap, so children always partition the
    parent's range and child.level == parent.level + 1.
    """
    if not sentences:
        raise TreeError("cannot build a tree over zero sentences")
    n = len(sentences)
    prefix = [0] * (n + 1)
    for i, s in enumerate(sentences):
        prefix[i + 1] = prefix[i] + s.token_len

    cleaned = _clean_points(points, n, max_levels)

    nodes: dict[int, TreeNode] = {}
    next_id = 0

    def new_node(level: int, start: int, is_title: bool, parent: int | None) -> TreeNode:
        nonlocal next_id
        node = TreeNode(node_id=next_id, level=level, start_sentence=start,
                        end_sentence=start, is_title=is_title, parent=parent)
        nodes[next_id] = node
        next_id += 1
        return node

    def close(node: TreeNode, end: int) -> None:
        node.end_sentence = end
        node.token_len = prefix[end - 1] - prefix[node.start_sentence - 1]

    root = new_node(0, 1, False, None)
    open_by_level: dict[int, TreeNode] = {0: root}

    def open_node(level: int, start: int, is_title: bool) -> TreeNode:
        parent = open_by_level[level - 1]
        if not parent.children and parent.start_sentence < start:
            # Leading gap: the parent's first real child starts late, so a
            # synthetic sibling takes ownership of the prefix range.
            filler = new_node(level, parent.start_sentence, False, parent.node_id)
            close(filler, start)
            parent.children.append(filler.node_id)
        node = new_node(level, start, is_title, parent.node_id)
        parent.children.append(node.node_id)
        open_by_level[level] = node
        return node

    for p in cleaned:
        for lvl in sorted((l for l in open_by_level if l >= p.level), reverse=True):
            close(open_by_level.pop(lvl), p.sentence_id)
        deepest = max(open_by_level)
        for lvl in range(deepest + 1, p.level):
            open_node(lvl, p.sentence_id, False)
        open_node(p.level, p.sentence_id, p.is_title)

    for lvl in sorted(open_by_level, reverse=True):
        close(open_by_level.pop(lvl), n + 1)

    tree = ChunkTree(doc_id=doc_id, sentences=list(sentences), nodes=nodes, root_id=root.node_id)
    validate_tree(tree)
    return tree


def validate_tree(tree: ChunkTree) -> None:
    """Check every structural invariant; raise TreeError on violation."""
    n = tree.num_sentences
    for i, s in enumerate(tree.sentences):
        if s.id != i + 1:
            raise TreeError(f"sentence ids not consecutive at position {i}")
    root = tree.nodes.get(tree.root_id)
    if root is None or root.level != 0:
        raise TreeError("missing or non-level-0 root")
    if (root.start_sentence, root.end_sentence) != (1, n + 1):
        raise TreeError("root must cover [1, N+1)")
    for node in tree.nodes.values():
        if node.start_sentence >= node.end_sentence:
            raise TreeError(f"node {node.node_id} has empty range")
        if node.token_len != tree.span_token_len(node.start_sentence, node.end_sentence):
            raise TreeError(f"node {node.node_id} token_len mismatch")
        if node.node_id != tree.root_id:
            parent = tree.nodes.get(node.parent if node.parent is not None else -1)
            if parent is None:
                raise TreeError(f"node {node.node_id} has no parent")
            if node.level != parent.level + 1:
                raise TreeError(f"node {node.node_id} level is not parent level + 1")
        if node.children:
            cursor = node.start_sentence
            for cid in node.children:
                child = tree.nodes.get(cid)
                if child is None or child.parent != node.node_id:
                    raise TreeError(f"node {node.node_id} has inconsistent child {cid}")
                if child.start_sentence != cursor:
                    raise TreeError(f"children of node {node.node_id} leave a gap or overlap")
                cursor = child.end_sentence
            if cursor != node.end_sentence:
                raise TreeError(f"children of node {node.node_id} do not cover its range")


def tree_points(tree: ChunkTree) -> list[ChunkPoint]:
    """The chunk points a tree encodes (start of every node at level >= 1)."""
    pts = [
        ChunkPoint(n.start_sentence, n.level, n.is_title)
        for n in tree.nodes.values()
        if n.level >= 1
    ]
    return sorted(pts, key=lambda p: (p.sentence_id, p.level))


def truncate_levels(tree: ChunkTree, max_level: int) -> ChunkTree:
    """Rebuild the tree keeping only nodes at depth <= max_level.

    Removed nodes' sentence ranges stay owned by their surviving ancestors.
    Idempotent: truncating again at the same or a larger depth is identity.
    """
    if max_level < 1:
        raise ValueError(f"max_level must be >= 1, got {max_level}")
    kept = [p for p in tree_points(tree) if p.level <= max_level]
    return build_tree(tree.sentences, kept, max_levels=max(max_level, 1), doc_id=tree.doc_id)


def fixed_size_split(tree: ChunkTree, size: int = DEFAULT_UNIT_SIZE) -> list[RetrievalUnit]:
    """Greedily pack each leaf's sentences into units of at most ``size`` tokens.

    A sentence that alone exceeds ``size`` forms its own unit. Units never
    cross leaf boundaries; doc_order is global.
    """
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    units: list[RetrievalUnit] = []

    def flush(leaf: TreeNode, start: int, end: int) -> None:
        order = len(units)
        units.append(
            RetrievalUnit(
                unit_id=f"u{order}",
                text=tree.span_text(start, end),
                token_len=tree.span_token_len(start, end),
                leaf_node=leaf.node_id,
                doc_order=order,
                start_sentence=start,
                end_sentence=end,
            )
        )

    for leaf in tree.leaves():
        start = leaf.start_sentence
        total = 0
        for sid in range(leaf.start_sentence, leaf.end_sentence):
            t = tree.sentences[sid - 1].token_len
            if total and total + t > size:
                flush(leaf, start, sid)
                start, total = sid, 0
            total += t
        flush(leaf, start, leaf.end_sentence)
    return units


def serialize_tree(tree: ChunkTree) -> str:
    """Render a tree as a canonical JSON document (stable byte-for-byte)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "doc_id": tree.doc_id,
        "root_id": tree.root_id,
        "sentences": [
            {"id": s.id, "text": s.text, "char_len": s.char_len, "token_len": s.token_len}
            for s in tree.sentences
        ],
        "nodes": [
            {
                "node_id": n.node_id,
                "level": n.level,
                "start_sentence": n.start_sentence,
                "end_sentence": n.end_sentence,
                "is_title": n.is_title,
                "parent": n.parent,
                "children": n.children,
                "token_len": n.token_len,
            }
            for n in sorted(tree.nodes.values(), key=lambda n: n.node_id)
        ],
    }
    return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1)


def deserialize_tree(document: str) -> ChunkTree:
    """Parse a serialized tree, validating schema version and invariants."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"tree document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported tree schema version: {doc.get('schema_version') if isinstance(doc, dict) else doc!r}"
        )
    try:
        sentences = [
            Sentence(id=s["id"], text=s["text"], char_len=s["char_len"], token_len=s["token_len"])
            for s in doc["sentences"]
        ]
        nodes = {
            n["node_id"]: TreeNode(
                node_id=n["node_id"],
                level=n["level"],
                start_sentence=n["start_sentence"],
                end_sentence=n["end_sentence"],
                is_title=n["is_title"],
                parent=n["parent"],
                children=list(n["children"]),
                token_len=n["token_len"],
            )
            for n in doc["nodes"]
        }
        tree = ChunkTree(doc_id=doc["doc_id"], sentences=sentences, nodes=nodes, root_id=doc["root_id"])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed tree document: {exc!r}") from exc
    try:
        validate_tree(tree)
    except TreeError as exc:
        raise SchemaError(f"tree document violates invariants: {exc}") from exc
    return tree


def serialize_units(units: list[RetrievalUnit], doc_id: str) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "doc_id": doc_id,
        "units": [
            {
                "unit_id": u.unit_id,
                "text": u.text,
                "token_len": u.token_len,
                "leaf_node": u.leaf_node,
                "doc_order": u.doc_order,
                "start_sentence": u.start_sentence,
                "end_sentence": u.end_sentence,
            }
            for u in units
        ],
    }
    return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1)


def deserialize_units(document: str) -> list[RetrievalUnit]:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"units document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError("unsupported units schema version")
    try:
        return [
            RetrievalUnit(
                unit_id=u["unit_id"],
                text=u["text"],
                token_len=u["token_len"],
                leaf_node=u["leaf_node"],
                doc_order=u["doc_order"],
                start_sentence=u["start_sentence"],
                end_sentence=u["end_sentence"],
            )
            for u in doc["units"]
        ]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed units document: {exc!r}") from exc

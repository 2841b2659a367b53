"""Query-time ranking and context assembly under a token budget.

``auto_merge`` walks ranked retrieval units through the chunk tree: once
enough sibling material has been retrieved (at least two children, combined
length above the adaptive threshold, parent still affordable), the retrieved
pieces are replaced by their parent node, trading granularity for semantic
completeness. ``flat_retrieve`` is the plain rank-order packing baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import Embedder, cosine_matrix
from .textproc import TokenizerHandle, get_tokenizer, token_len
from .tree import ChunkTree, RetrievalUnit, TreeNode

DEFAULT_BUDGET = 4096

MemberKey = int | str  # tree node id or retrieval unit id


@dataclass
class RankedList:
    """Units ordered by query similarity (ties broken by document order)."""

    query: str
    entries: list[tuple[str, float]]
    units: dict[str, RetrievalUnit]


@dataclass
class AssembledContext:
    """The final retrieval context: text, its token length, and provenance."""

    text: str
    token_len: int
    node_ids: list[MemberKey]
    truncated: bool


def rank_units(units: list[RetrievalUnit], query: str, embedder: Embedder) -> RankedList:
    """Rank units by cosine similarity to the query, descending."""
    if not units:
        raise ValueError("rank_units requires at least one unit")
    embeddings = embedder.embed([query] + [u.text for u in units])
    scores = cosine_matrix(embeddings[0], embeddings[1:])
    order = sorted(range(len(units)), key=lambda i: (-scores[i], units[i].doc_order))
    return RankedList(
        query=query,
        entries=[(units[i].unit_id, float(scores[i])) for i in order],
        units={u.unit_id: u for u in units},
    )


def theta_star(used_tokens: float, node: TreeNode | float, budget: float) -> float:
    """Adaptive merge threshold: rises from len(p)/3 to 2*len(p)/3 as the budget fills."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    if used_tokens < 0:
        raise ValueError("used_tokens must be non-negative")
    length = node.token_len if isinstance(node, TreeNode) else float(node)
    return (length / 3.0) * (1.0 + used_tokens / budget)


class MergeIndex:
    """The tree extended with retrieval units as children of their leaves.

    Tree nodes keep their integer ids; units appear under their string
    unit_id. Every entry has a sentence span, a token length, and a parent,
    so the upward merge walk treats units and nodes uniformly.
    """

    def __init__(self, tree: ChunkTree, units: list[RetrievalUnit]):
        self.tree = tree
        self.span: dict[MemberKey, tuple[int, int]] = {}
        self.tokens: dict[MemberKey, int] = {}
        self.parent: dict[MemberKey, MemberKey | None] = {}
        self.level: dict[MemberKey, int] = {}
        self.children: dict[MemberKey, list[MemberKey]] = {}
        for node in tree.nodes.values():
            self.span[node.node_id] = (node.start_sentence, node.end_sentence)
            self.tokens[node.node_id] = node.token_len
            self.parent[node.node_id] = node.parent
            self.level[node.node_id] = node.level
            self.children[node.node_id] = list(node.children)
        for unit in units:
            leaf = tree.nodes[unit.leaf_node]
            if leaf.children:
                raise ValueError(f"unit {unit.unit_id} links to non-leaf node {leaf.node_id}")
            self.span[unit.unit_id] = (unit.start_sentence, unit.end_sentence)
            self.tokens[unit.unit_id] = unit.token_len
            self.parent[unit.unit_id] = leaf.node_id
            self.level[unit.unit_id] = leaf.level + 1
            self.children[leaf.node_id].append(unit.unit_id)

    def covers(self, outer: MemberKey, inner: MemberKey) -> bool:
        a, b = self.span[outer]
        c, d = self.span[inner]
        return a <= c and d <= b


class RetrievedSet:
    """Members currently selected, kept as a coverage antichain.

    Adding an entry already covered by a member is a no-op (it contributes
    zero additional tokens); adding an entry that covers existing members
    removes them, which is exactly the upward-merge replacement step.
    """

    def __init__(self, index: MergeIndex):
        self.index = index
        self.members: list[MemberKey] = []

    def add(self, key: MemberKey) -> bool:
        if any(self.index.covers(m, key) for m in self.members):
            return False
        self.members = [m for m in self.members if not self.index.covers(key, m)]
        self.members.append(key)
        return True

    def __contains__(self, key: MemberKey) -> bool:
        return key in self.members

    def used_tokens(self) -> int:
        return sum(self.index.tokens[m] for m in self.members)

    def in_doc_order(self) -> list[MemberKey]:
        return sorted(self.members, key=lambda m: self.index.span[m])

    def spans(self) -> list[tuple[int, int]]:
        return [self.index.span[m] for m in self.members]


def check_merge_conditions(
    retrieved: RetrievedSet, parent: MemberKey, used_tokens: float, budget: float
) -> tuple[bool, bool, bool]:
    """The three upward-merge conditions for parent candidate ``parent``.

    1: at least two of the parent's children are retrieved; 2: their combined
    length reaches the adaptive threshold; 3: the parent still fits in what
    remains of the budget.
    """
    index = retrieved.index
    present = [k for k in index.children.get(parent, []) if k in retrieved]
    present_tokens = sum(index.tokens[k] for k in present)
    cond1 = len(present) >= 2
    cond2 = present_tokens >= theta_star(used_tokens, index.tokens[parent], budget)
    cond3 = budget - used_tokens >= index.tokens[parent]
    return cond1, cond2, cond3


def _cut_words(text: str, limit: int, handle: TokenizerHandle) -> tuple[str, int]:
    """Longest word-boundary prefix of ``text`` within ``limit`` tokens."""
    words = text.split()
    if handle.name == "whitespace":
        kept = words[:limit]
        return " ".join(kept), len(kept)
    kept = []
    for word in words:
        candidate = " ".join(kept + [word])
        if handle.count(candidate) > limit:
            break
        kept.append(word)
    out = " ".join(kept)
    return out, handle.count(out)


def _render_spans(
    tree: ChunkTree,
    spans: list[tuple[int, int]],
    budget: int,
    handle: TokenizerHandle,
) -> tuple[str, int, bool]:
    """Render spans in order, admitting whole sentences while the budget lasts.

    The sentence straddling the budget is hard-cut at the token level so the
    context fills to exactly the budget; blocks are separated by blank lines.
    """
    blocks: list[list[str]] = []
    used = 0
    truncated = False
    for start, end in spans:
        block: list[str] = []
        for sid in range(start, end):
            sentence = tree.sentences[sid - 1]
            if used + sentence.token_len <= budget:
                block.append(sentence.text)
                used += sentence.token_len
                continue
            remainder = budget - used
            if remainder > 0:
                piece, got = _cut_words(sentence.text, remainder, handle)
                if piece:
                    block.append(piece)
                    used += got
            truncated = True
            break
        if block:
            blocks.append(block)
        if truncated:
            break
    text = "\n\n".join(" ".join(block) for block in blocks)
    return text, used, truncated


def auto_merge(
    ranked: RankedList,
    tree: ChunkTree,
    budget: int = DEFAULT_BUDGET,
    *,
    tokenizer: str | TokenizerHandle = "whitespace",
    trace: list | None = None,
) -> AssembledContext:
    """Assemble a context by rank-order selection with upward merging.

    Ranked units are added one by one; after each addition the unit's
    ancestors are merged in while all three conditions hold (the root is
    never a merge target). The assembled members are rendered in document
    order and truncated to the budget.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    handle = tokenizer if isinstance(tokenizer, TokenizerHandle) else get_tokenizer(tokenizer)
    index = MergeIndex(tree, [ranked.units[uid] for uid, _ in ranked.entries])
    retrieved = RetrievedSet(index)
    used = 0
    for uid, score in ranked.entries:
        added = retrieved.add(uid)
        used = retrieved.used_tokens()
        if trace is not None:
            trace.append(
                {"event": "add", "unit": uid, "score": score, "added": added,
                 "used_tokens": used, "spans": retrieved.spans()}
            )
        parent = index.parent[uid]
        while parent is not None and index.level[parent] >= 1:
            conds = check_merge_conditions(retrieved, parent, used, budget)
            if not all(conds):
                break
            if used >= budget:
                break
            retrieved.add(parent)
            used = retrieved.used_tokens()
            if trace is not None:
                trace.append(
                    {"event": "merge", "parent": parent, "conds": conds,
                     "used_tokens": used, "spans": retrieved.spans()}
                )
            parent = index.parent[parent]
        if used >= budget:
            break

    members = retrieved.in_doc_order()
    text, final_tokens, cut = _render_spans(tree, [index.span[m] for m in members], budget, handle)
    truncated = cut or used > budget
    if trace is not None:
        trace.append(
            {"event": "final", "members": members, "token_len": final_tokens,
             "truncated": truncated}
        )
    return AssembledContext(text=text, token_len=final_tokens, node_ids=members, truncated=truncated)


def flat_retrieve(
    ranked: RankedList,
    budget: int = DEFAULT_BUDGET,
    *,
    tokenizer: str | TokenizerHandle = "whitespace",
) -> AssembledContext:
    """Take units in rank order while the budget allows, render in document order.

    The first unit that does not fit whole is cut at the token level to fill
    the budget exactly; later units are dropped.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    handle = tokenizer if isinstance(tokenizer, TokenizerHandle) else get_tokenizer(tokenizer)
    kept: list[tuple[RetrievalUnit, str, int]] = []
    used = 0
    truncated = False
    for uid, _score in ranked.entries:
        unit = ranked.units[uid]
        if used + unit.token_len <= budget:
            kept.append((unit, unit.text, unit.token_len))
            used += unit.token_len
            continue
        remainder = budget - used
        if remainder > 0:
            piece, got = _cut_words(unit.text, remainder, handle)
            if piece:
                kept.append((unit, piece, got))
                used += got
        truncated = True
        break
    kept.sort(key=lambda item: item[0].doc_order)
    text = "\n\n".join(piece for _, piece, _ in kept)
    return AssembledContext(
        text=text,
        token_len=used,
        node_ids=[u.unit_id for u, _, _ in kept],
        truncated=truncated,
    )

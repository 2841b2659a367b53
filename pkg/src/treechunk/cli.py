"""Command-line surface: chunk, retrieve, eval, synth.

Configuration precedence is flags > config file > defaults. Credentials are
only ever read from environment variables named in the config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from . import corpus as corpus_mod
from .backends import HttpChatBackend, MockBackend
from .baselines import BagOfWordsEmbedder, HttpEmbedder
from .errors import ConfigError, DocumentNotFoundError, ToolkitError
from .evalharness import (
    DEFAULT_SWEEP_BUDGETS,
    MethodSpec,
    budget_sweep,
    chunk_document,
    chunking_accuracy,
    load_gold_structures,
    load_qa_items,
    max_level_ablation,
    timing_report,
)
from .retrieval import auto_merge, flat_retrieve, rank_units
from .structurer import InferenceConfig
from .textproc import read_documents, split_sentences
from .tree import (
    deserialize_tree,
    deserialize_units,
    serialize_tree,
    serialize_units,
)

logger = logging.getLogger(__name__)

EVAL_SUITES = ("chunking", "retrieval", "sweep", "level_ablation", "timing")


@dataclass
class RunConfig:
    """Resolved run settings; every field has a CLI flag of the same name."""

    backend: str = "mock"
    backend_endpoint: str = ""
    backend_model: str = ""
    backend_credential_env: str = "TREECHUNK_API_KEY"
    embedder: str = "bow"
    embedder_endpoint: str = ""
    embedder_model: str = ""
    embedder_credential_env: str = "TREECHUNK_EMBED_KEY"
    tokenizer: str = "whitespace"
    window_token_limit: int = 16384
    fixed_chunk_size: int = 200
    budget: int = 4096
    max_levels: int = 4
    strategy: str = "auto_merge"
    sc_percentile: float = 10.0
    max_sentence_chars: int = 100

    def validated(self) -> "RunConfig":
        for name in ("window_token_limit", "fixed_chunk_size", "budget", "max_levels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.backend not in {"mock", "http"}:
            raise ConfigError(f"backend must be mock or http, got {self.backend!r}")
        if self.embedder not in {"bow", "http"}:
            raise ConfigError(f"embedder must be bow or http, got {self.embedder!r}")
        if self.strategy not in {"flat", "auto_merge"}:
            raise ConfigError(f"strategy must be flat or auto_merge, got {self.strategy!r}")
        return self


_INT_FIELDS = {"window_token_limit", "fixed_chunk_size", "budget", "max_levels", "max_sentence_chars"}
_FLOAT_FIELDS = {"sc_percentile"}


def load_config_file(path: str | Path) -> dict:
    """Parse a ``key = value`` config file (``#`` starts a comment)."""
    values: dict = {}
    known = {f.name for f in fields(RunConfig)}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in _INT_FIELDS:
            values[key] = int(value)
        elif key in _FLOAT_FIELDS:
            values[key] = float(value)
        else:
            values[key] = value
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return RunConfig(**values).validated()


def build_backend(config: RunConfig):
    if config.backend == "mock":
        return MockBackend()
    return HttpChatBackend(
        endpoint=config.backend_endpoint,
        model=config.backend_model,
        credential_env=config.backend_credential_env,
    )


def build_embedder(config: RunConfig):
    if config.embedder == "bow":
        return BagOfWordsEmbedder()
    return HttpEmbedder(
        endpoint=config.embedder_endpoint,
        model=config.embedder_model,
        credential_env=config.embedder_credential_env,
    )


def _inference_config(config: RunConfig) -> InferenceConfig:
    return InferenceConfig(
        window_token_limit=config.window_token_limit,
        max_levels=config.max_levels,
        tokenizer=config.tokenizer,
    )


def cmd_chunk(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    method = MethodSpec.parse(args.method)
    backend = build_backend(config) if method.chunker == "hc" else None
    embedder = build_embedder(config) if method.chunker == "sc" else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs = read_documents(args.input)
    if not docs:
        logger.error("no documents found at %s", args.input)
        return 1

    def process(item: tuple[str, str]) -> tuple[str, Exception | None]:
        doc_id, text = item
        try:
            sentences = split_sentences(text, config.max_sentence_chars, config.tokenizer)
            chunked = chunk_document(
                doc_id, sentences, method, backend=backend, embedder=embedder,
                chunk_size=config.fixed_chunk_size, sc_percentile=config.sc_percentile,
                inference_config=_inference_config(config),
            )
            (out_dir / f"{doc_id}.tree.json").write_text(
                serialize_tree(chunked.tree), encoding="utf-8"
            )
            (out_dir / f"{doc_id}.units.json").write_text(
                serialize_units(chunked.units, doc_id), encoding="utf-8"
            )
            return doc_id, None
        except Exception as exc:
            return doc_id, exc

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(process, docs))
    else:
        results = [process(item) for item in docs]

    failures = [(doc_id, exc) for doc_id, exc in results if exc is not None]
    for doc_id, exc in failures:
        logger.error("chunking failed for %s: %r", doc_id, exc)
    print(f"chunked {len(results) - len(failures)}/{len(results)} documents -> {out_dir}")
    return 1 if failures else 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    store = Path(args.store)
    tree_path = store / f"{args.doc_id}.tree.json"
    units_path = store / f"{args.doc_id}.units.json"
    if not tree_path.exists() or not units_path.exists():
        raise DocumentNotFoundError(
            f"no persisted chunks for doc id {args.doc_id!r} under {store}"
        )
    tree = deserialize_tree(tree_path.read_text(encoding="utf-8"))
    units = deserialize_units(units_path.read_text(encoding="utf-8"))
    embedder = build_embedder(config)
    budget = config.budget
    strategy = config.strategy

    ranked = rank_units(units, args.query, embedder)
    trace: list = []
    if strategy == "auto_merge":
        context = auto_merge(ranked, tree, budget, tokenizer=config.tokenizer, trace=trace)
    else:
        context = flat_retrieve(ranked, budget, tokenizer=config.tokenizer)
        trace.append({"event": "final", "members": context.node_ids,
                      "token_len": context.token_len, "truncated": context.truncated})

    audit_path = Path(args.out) if args.out else store / f"{args.doc_id}.audit.txt"
    audit_path.parent.mkdir(parents=True, exist_ok=True)
    audit_lines = [
        f"doc_id\t{args.doc_id}",
        f"query\t{args.query}",
        f"strategy\t{strategy}",
        f"budget\t{budget}",
    ]
    audit_lines += [json.dumps(event, ensure_ascii=False, sort_keys=True) for event in trace]
    audit_path.write_text("\n".join(audit_lines) + "\n", encoding="utf-8")
    print(context.text)
    return 0


def _write_rows(rows: list[dict], columns: list[str], out_path: Path | None) -> str:
    def cell(value) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    lines = ["\t".join(columns)]
    lines += ["\t".join(cell(row.get(c)) for c in columns) for row in rows]
    table = "\n".join(lines)
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(
            json.dumps({"columns": columns, "rows": rows}, ensure_ascii=False,
                       sort_keys=True, indent=1),
            encoding="utf-8",
        )
    return table


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    embedder = build_embedder(config)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    needs_backend = any(MethodSpec.parse(m).chunker == "hc" for m in methods)
    backend = build_backend(config) if needs_backend else None
    infer_cfg = _inference_config(config)

    docs = {
        doc_id: split_sentences(text, config.max_sentence_chars, config.tokenizer)
        for doc_id, text in read_documents(args.docs)
    }
    if not docs:
        logger.error("no documents found at %s", args.docs)
        return 1

    out_path = Path(args.out) / f"{args.suite}.json" if args.out else None
    kwargs = dict(
        embedder=embedder, backend=backend, chunk_size=config.fixed_chunk_size,
        sc_percentile=config.sc_percentile, inference_config=infer_cfg,
    )

    if args.suite == "chunking":
        if not args.gold:
            raise ConfigError("the chunking suite requires --gold")
        gold = load_gold_structures(args.gold)
        rows = chunking_accuracy(docs, gold, methods, jobs=args.jobs, **kwargs)
        table = _write_rows(
            [
                {"method": r.method, "f1_l1": r.f1_l1, "f1_l2": r.f1_l2,
                 "f1_all": r.f1_all, "n_failures": r.n_failures}
                for r in rows
            ],
            ["method", "f1_l1", "f1_l2", "f1_all", "n_failures"],
            out_path,
        )
    elif args.suite in {"retrieval", "sweep"}:
        qa_items = _load_qa(args)
        budgets = (
            [int(b) for b in args.budgets.split(",")]
            if args.budgets
            else ([config.budget] if args.suite == "retrieval" else list(DEFAULT_SWEEP_BUDGETS))
        )
        rows = budget_sweep(docs, qa_items, methods, budgets, jobs=args.jobs, **kwargs)
        table = _write_rows(
            [
                {"method": r.method, "budget": r.budget,
                 "evidence_recall": r.evidence_recall, "n_failures": r.n_failures}
                for r in rows
            ],
            ["method", "budget", "evidence_recall", "n_failures"],
            out_path,
        )
    elif args.suite == "level_ablation":
        qa_items = _load_qa(args)
        if backend is None:
            backend = build_backend(config)
        rows = []
        for doc_id, sentences in sorted(docs.items()):
            chunked = chunk_document(
                doc_id, sentences, MethodSpec.parse("hc"), backend=backend,
                embedder=embedder, chunk_size=config.fixed_chunk_size,
                inference_config=infer_cfg,
            )
            doc_items = [q for q in qa_items if q.doc_id == doc_id]
            if not doc_items:
                continue
            recalls = max_level_ablation(
                chunked.tree, doc_items, embedder=embedder, budget=config.budget,
                chunk_size=config.fixed_chunk_size, max_level=config.max_levels,
            )
            for label, recall in recalls.items():
                rows.append({"doc_id": doc_id, "setting": label, "evidence_recall": recall})
        table = _write_rows(rows, ["doc_id", "setting", "evidence_recall"], out_path)
    elif args.suite == "timing":
        trows = timing_report(docs, methods, **kwargs)
        table = _write_rows(
            [
                {"method": r.method, "n_docs": r.n_docs, "mean_wall_s": r.mean_wall_s,
                 "mean_backend_s": r.mean_backend_s, "mean_units": r.mean_units}
                for r in trows
            ],
            ["method", "n_docs", "mean_wall_s", "mean_backend_s", "mean_units"],
            out_path,
        )
    else:  # pragma: no cover - argparse choices reject others
        raise ConfigError(f"unknown suite {args.suite!r}")

    print(table)
    return 0


def _load_qa(args: argparse.Namespace):
    if not args.qa:
        raise ConfigError(f"the {args.suite} suite requires --qa")
    qa_items = load_qa_items(args.qa)
    if not qa_items:
        raise ConfigError(f"QA file {args.qa} contains no items")
    return qa_items


def cmd_synth(args: argparse.Namespace) -> int:
    corpus = corpus_mod.generate_corpus(args.seed, n_docs=args.docs, qa_per_doc=args.qa_per_doc)
    paths = corpus_mod.write_corpus(corpus, args.out)
    print(
        f"wrote {len(corpus.docs)} documents, {len(corpus.qa_items)} QA items -> "
        + ", ".join(str(p) for p in paths.values())
    )
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in _INT_FIELDS:
            parser.add_argument(flag, type=int, default=None)
        elif f.name in _FLOAT_FIELDS:
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treechunk",
        description="Hierarchical document chunking and budget-constrained retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_chunk = sub.add_parser("chunk", help="chunk documents and persist trees/units")
    p_chunk.add_argument("--input", required=True, help="text file, JSONL file, or directory")
    p_chunk.add_argument("--method", default="hc", help="fc, sc, or hc")
    p_chunk.add_argument("--out", required=True, help="output directory")
    p_chunk.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p_chunk)
    p_chunk.set_defaults(func=cmd_chunk)

    p_ret = sub.add_parser("retrieve", help="assemble a context for a query")
    p_ret.add_argument("--store", required=True, help="directory written by `chunk`")
    p_ret.add_argument("--doc-id", required=True)
    p_ret.add_argument("--query", required=True)
    p_ret.add_argument("--out", help="audit file path (default: <store>/<doc_id>.audit.txt)")
    _add_config_flags(p_ret)
    p_ret.set_defaults(func=cmd_retrieve)

    p_eval = sub.add_parser("eval", help="run an evaluation suite")
    p_eval.add_argument("--suite", required=True, choices=EVAL_SUITES)
    p_eval.add_argument("--docs", required=True, help="documents file or directory")
    p_eval.add_argument("--qa", help="QA items JSONL")
    p_eval.add_argument("--gold", help="gold structure JSONL")
    p_eval.add_argument("--methods", default="fc,sc,hc,hc+am")
    p_eval.add_argument("--budgets", help="comma-separated token budgets")
    p_eval.add_argument("--out", help="directory for structured results")
    p_eval.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--docs", type=int, default=2)
    p_synth.add_argument("--qa-per-doc", type=int, default=3)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())

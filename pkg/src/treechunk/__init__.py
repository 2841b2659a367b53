"""Hierarchical document chunking and budget-constrained retrieval.

The pipeline: split a document into numbered sentences, infer a multi-level
chunk tree through a text-generation backend (windowed for long documents),
sub-chunk tree leaves into fixed-size retrieval units, then assemble query
contexts under a token budget either flat or with upward merging through the
tree. Baseline chunkers and an evaluation harness round out the toolkit.
"""

from .backends import GenerationBackend, HttpChatBackend, MockBackend
from .baselines import (
    BagOfWordsEmbedder,
    Embedder,
    HttpEmbedder,
    fixed_chunk,
    semantic_boundaries,
    semantic_chunk,
)
from .errors import (
    BackendError,
    ConfigError,
    DocumentNotFoundError,
    EmptyInputError,
    ProgressError,
    SchemaError,
    ToolkitError,
    TreeError,
    UnknownTokenizerError,
)
from .evalharness import (
    GoldStructure,
    MetricRow,
    QAItem,
    budget_sweep,
    chunk_point_f1,
    chunking_accuracy,
    evidence_recall,
    max_level_ablation,
    timing_report,
)
from .retrieval import (
    AssembledContext,
    MergeIndex,
    RankedList,
    RetrievedSet,
    auto_merge,
    check_merge_conditions,
    flat_retrieve,
    rank_units,
    theta_star,
)
from .structurer import (
    InferenceConfig,
    ResidualLines,
    build_prompt,
    get_residual_lines,
    hierarchical_chunk,
    merge_points,
    parse_chunk_output,
    select_window,
)
from .textproc import (
    Sentence,
    TokenizerHandle,
    format_numbered_lines,
    parse_numbered_lines,
    register_tokenizer,
    split_sentences,
    token_len,
)
from .tree import (
    ChunkPoint,
    ChunkTree,
    RetrievalUnit,
    TreeNode,
    build_tree,
    deserialize_tree,
    fixed_size_split,
    serialize_tree,
    tree_points,
    truncate_levels,
)

__version__ = "0.1.0"

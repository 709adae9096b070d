"""Retrieval-augmented guardrail engine for LLM-drafted patient-portal replies.

The library half exposes the pipeline pieces (taxonomy, corpus, embedding,
retrieval, judge, induction, statistics, reporting); the CLI (`raec`) and
the HTTP service wrap them for batch and real-time use.
"""

from .corpus import (
    IngestReport,
    MessageTriplet,
    balanced_sample,
    dedupe,
    ingest,
    stratified_sample,
)
from .embedding import DeterministicEmbedder, EmbedderConfig, RemoteEmbedder, make_embedder
from .errors import (
    BackendError,
    BackendTimeout,
    ConfigError,
    EmbeddingError,
    ParseError,
    RaecError,
    RetrievalError,
    TaxonomyError,
    UnknownCodeError,
    ValidationError,
)
from .evalstats import (
    AnnotationSet,
    ConcordanceResult,
    ConfusionCounts,
    McNemarResult,
    MetricsRow,
    concordance,
    confusion,
    kendall_tau,
    mcnemar,
    metrics,
    micro_totals,
)
from .induction import CodeProposal, InductionResult, ReviewDecision, induct, merge_review
from .judge import (
    ErrorAssignment,
    GuardrailInput,
    GuardrailVerdict,
    JudgeConfig,
    Stage1Finding,
    check,
    check_batch,
    run_stage1,
    run_stage2,
)
from .llm import HTTPBackend, LLMConfig, ScriptedBackend, make_backend
from .reporting import (
    ErrorSummary,
    FrequencyDelta,
    relative_frequencies,
    stratify_by_utilization,
    summarize,
)
from .retrieval import (
    Index,
    IndexEntry,
    RetrievalJudgment,
    RetrievalQuery,
    RetrievedPair,
    build_index,
    cosine,
    evaluate_retrieval,
    retrieve,
)
from .taxonomy import (
    Domain,
    ErrorCode,
    Subdomain,
    Taxonomy,
    label_universe,
    load_taxonomy,
    project,
    seed_taxonomy,
)

__version__ = "0.1.0"

"""Archive index with metadata pre-filtering and cosine top-k retrieval.

The reference implementation is an exact scan: candidates are narrowed by
exact (case-insensitive, trimmed) metadata matching, then ranked by cosine
similarity computed in float64 over float32 vectors, ties broken by
message_id ascending. An approximate index may replace the scan later but
must reproduce it exactly at small scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .corpus import MessageTriplet
from .embedding import Embedder, read_matrix, write_matrix
from .errors import RetrievalError, ValidationError
from .evalstats import kendall_tau

DEFAULT_K = 5

FILTER_FIELDS = ("recipient_name", "department", "specialty")


def _norm_meta(value: str) -> str:
    return value.strip().lower()


@dataclass(frozen=True)
class IndexEntry:
    """Metadata for one archived message-response pair (vector kept separately)."""

    message_id: str
    recipient_name: str
    department: str
    specialty: str
    thread_id: str
    patient_message: str
    response_text: str


@dataclass(frozen=True)
class RetrievalQuery:
    query_text: str | None = None
    query_vector: np.ndarray | None = None
    recipient_name: str | None = None
    department: str | None = None
    specialty: str | None = None
    k: int = DEFAULT_K
    exclude_thread_id: str | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.query_text is None and self.query_vector is None:
            raise ValidationError("query needs query_text or query_vector")

    def filters(self) -> dict[str, str]:
        out = {}
        for name in FILTER_FIELDS:
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass(frozen=True)
class RetrievedPair:
    """One retrieved exemplar: archived patient message plus clinician response."""

    message_id: str
    patient_message: str
    response_text: str
    similarity: float
    rank: int

    def to_record(self) -> dict:
        return {
            "message_id": self.message_id,
            "patient_message": self.patient_message,
            "response_text": self.response_text,
            "similarity": self.similarity,
            "rank": self.rank,
        }


class Index:
    """Immutable vector index over archived message-response pairs."""

    def __init__(self, entries: Sequence[IndexEntry], matrix: np.ndarray,
                 embedder: Embedder | None = None) -> None:
        if len(entries) != matrix.shape[0]:
            raise ValidationError("entry count does not match matrix rows")
        self.entries = tuple(entries)
        self.matrix = np.ascontiguousarray(matrix, dtype="<f4")
        self.embedder = embedder
        # per-row sqrt(dot(v, v)): same accumulation as scoring, so equal
        # vectors always get equal norms (a blocked axis-reduction may not)
        mat64 = self.matrix.astype("<f8")
        self._norms = np.fromiter(
            (np.sqrt(np.dot(row, row)) for row in mat64), dtype="<f8", count=len(mat64)
        )
        self._ids = np.array([e.message_id for e in entries], dtype=str)
        self._meta = {
            name: np.array([_norm_meta(getattr(e, name)) for e in entries], dtype=str)
            for name in FILTER_FIELDS
        }
        self._threads = np.array([e.thread_id for e in entries], dtype=str)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def build_index(triplets: Sequence[MessageTriplet], embedder: Embedder) -> Index:
    """Embed every patient message and assemble the archive index.

    Message ids are the zero-padded input ordinals, which keeps rebuilds
    deterministic and makes the documented tie-break (message_id ascending)
    equal to stable input order.
    """
    if not triplets:
        raise ValidationError("cannot build an index over zero triplets")
    for i, t in enumerate(triplets):
        if not t.patient_message.strip():
            raise ValidationError(f"cannot embed message for thread {t.thread_id!r}")
    matrix = embedder.embed_batch([t.patient_message for t in triplets])
    entries = [
        IndexEntry(
            message_id=f"{i:08d}",
            recipient_name=t.recipient_name,
            department=t.department,
            specialty=t.specialty,
            thread_id=t.thread_id,
            patient_message=t.patient_message,
            response_text=t.clinician_reply,
        )
        for i, t in enumerate(triplets)
    ]
    return Index(entries, matrix, embedder=embedder)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity with float64 accumulation; raises on zero vectors."""
    u = np.asarray(u, dtype="<f8").ravel()
    v = np.asarray(v, dtype="<f8").ravel()
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("cosine is undefined for a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _query_vector(index: Index, query: RetrievalQuery) -> np.ndarray:
    if query.query_vector is not None:
        vec = np.asarray(query.query_vector, dtype="<f8").ravel()
    else:
        if index.embedder is None:
            raise RetrievalError("index has no embedder; supply query_vector")
        vec = index.embedder.embed(query.query_text).astype("<f8")
    if vec.shape[0] != index.dim:
        raise RetrievalError(f"query dim {vec.shape[0]} != index dim {index.dim}")
    if np.linalg.norm(vec) == 0.0:
        raise RetrievalError("query vector is all zeros")
    return vec


def _candidate_mask(index: Index, filters: dict[str, str],
                    exclude_thread_id: str | None) -> np.ndarray:
    mask = np.ones(len(index), dtype=bool)
    for name, value in filters.items():
        mask &= index._meta[name] == _norm_meta(value)
    if exclude_thread_id is not None:
        mask &= index._threads != exclude_thread_id
    return mask


def retrieve(index: Index, query: RetrievalQuery, relax_filters: bool = False) -> list[RetrievedPair]:
    """Filter-then-rank top-k lookup.

    Candidates must match every supplied filter field exactly
    (case-insensitive, trimmed); fewer than k matches return fewer pairs.
    With relax_filters=True an empty candidate set retries after dropping
    recipient_name, then department (specialty is never dropped).
    """
    if len(index) == 0:
        raise RetrievalError("index is empty")
    qvec = _query_vector(index, query)

    filters = query.filters()
    mask = _candidate_mask(index, filters, query.exclude_thread_id)
    if relax_filters and not mask.any():
        for drop in ("recipient_name", "department"):
            if drop in filters:
                filters = {k: v for k, v in filters.items() if k != drop}
                mask = _candidate_mask(index, filters, query.exclude_thread_id)
                if mask.any():
                    break
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return []

    # Per-candidate float64 dot products, not a blocked matmul: BLAS gemv can
    # differ in the last ulp between identical rows depending on position,
    # which would make the message_id tie-break depend on row order.
    cand_rows = index.matrix[cand].astype("<f8")
    dots = np.fromiter(
        (np.dot(row, qvec) for row in cand_rows), dtype="<f8", count=cand.size
    )
    scores = dots / (index._norms[cand] * np.linalg.norm(qvec))
    # lexsort: primary key last -> sort by -score, ties by message_id ascending
    order = np.lexsort((index._ids[cand], -scores))
    top = order[: min(query.k, cand.size)]
    pairs = []
    for rank, pos in enumerate(top, start=1):
        entry = index.entries[cand[pos]]
        pairs.append(
            RetrievedPair(
                message_id=entry.message_id,
                patient_message=entry.patient_message,
                response_text=entry.response_text,
                similarity=float(scores[pos]),
                rank=rank,
            )
        )
    return pairs


# --- persistence ---------------------------------------------------------

_HEADER_FORMAT = "raec-index-v1"


def save_index(index: Index, base: Union[str, Path]) -> tuple[Path, Path]:
    """Persist as <base>.vec (little-endian float32 rows) + <base>.meta.jsonl."""
    base = Path(base)
    vec_path = base.with_suffix(base.suffix + ".vec")
    meta_path = base.with_suffix(base.suffix + ".meta.jsonl")
    write_matrix(vec_path, index.matrix)
    with open(meta_path, "w", encoding="utf-8") as fh:
        header = {"format": _HEADER_FORMAT, "dim": index.dim, "count": len(index)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for e in index.entries:
            fh.write(json.dumps(e.__dict__, sort_keys=True) + "\n")
    return vec_path, meta_path


def load_index(base: Union[str, Path], embedder: Embedder | None = None) -> Index:
    base = Path(base)
    vec_path = base.with_suffix(base.suffix + ".vec")
    meta_path = base.with_suffix(base.suffix + ".meta.jsonl")
    with open(meta_path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != _HEADER_FORMAT:
            raise ValidationError(f"{meta_path}: not a {_HEADER_FORMAT} sidecar")
        entries = [IndexEntry(**json.loads(line)) for line in fh if line.strip()]
    matrix = read_matrix(vec_path, header["dim"])
    if matrix.shape[0] != header["count"] or len(entries) != header["count"]:
        raise ValidationError(f"{base}: vector file and sidecar disagree on count")
    return Index(entries, matrix, embedder=embedder)


# --- retrieval quality evaluation ----------------------------------------


@dataclass(frozen=True)
class RetrievalJudgment:
    """Physician adjudication of one query's retrieved set."""

    query_id: str
    helpful: tuple[bool, ...]
    physician_ranking: tuple[int, ...]  # rank assigned to the item at each retrieval position

    def __post_init__(self) -> None:
        k = len(self.physician_ranking)
        if sorted(self.physician_ranking) != list(range(1, k + 1)):
            raise ValidationError(
                f"judgment {self.query_id!r}: physician_ranking must be a permutation of 1..{k}"
            )
        if len(self.helpful) != k:
            raise ValidationError(
                f"judgment {self.query_id!r}: helpful flags and ranking lengths differ"
            )


@dataclass(frozen=True)
class RetrievalEvalResult:
    mean_usefulness: float
    mean_kendall_tau: float
    frac_queries_with_any_helpful: float
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "mean_usefulness": self.mean_usefulness,
            "mean_kendall_tau": self.mean_kendall_tau,
            "frac_queries_with_any_helpful": self.frac_queries_with_any_helpful,
            "n_queries": self.n_queries,
        }


def evaluate_retrieval(judgments: Sequence[RetrievalJudgment]) -> RetrievalEvalResult:
    """Mean usefulness and mean Kendall tau over judged queries.

    Usefulness per query is the fraction of retrieved items marked helpful;
    tau compares retrieval order (1..k) against the physician's re-ranking.
    The fraction of queries with at least one helpful item is reported
    alongside, since the two aggregations answer different questions.
    """
    if not judgments:
        raise ValidationError("no judgments supplied")
    fractions = []
    taus = []
    any_helpful = 0
    for j in judgments:
        if len(j.physician_ranking) < 2:
            raise ValidationError(f"judgment {j.query_id!r}: need >= 2 ranked items for tau")
        fractions.append(sum(j.helpful) / len(j.helpful))
        taus.append(kendall_tau(list(range(1, len(j.physician_ranking) + 1)),
                                list(j.physician_ranking)))
        any_helpful += 1 if any(j.helpful) else 0
    n = len(judgments)
    return RetrievalEvalResult(
        mean_usefulness=sum(fractions) / n,
        mean_kendall_tau=sum(taus) / n,
        frac_queries_with_any_helpful=any_helpful / n,
        n_queries=n,
    )


def load_judgments(path: Union[str, Path]) -> list[RetrievalJudgment]:
    """Read JSON-lines {query_id, helpful:[bool], physician_ranking:[int]}."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(
                    RetrievalJudgment(
                        query_id=str(rec["query_id"]),
                        helpful=tuple(bool(h) for h in rec["helpful"]),
                        physician_ranking=tuple(int(r) for r in rec["physician_ranking"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad judgment record: {exc}") from exc
    return out

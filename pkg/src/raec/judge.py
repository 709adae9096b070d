"""Two-stage guardrail: detect whether a draft contains an error, then
classify detected errors against the taxonomy.

Stage 1 sees the patient message, the draft, chart metadata, and (in
enhanced mode) up to five retrieved exemplar exchanges as background
precedent. Stage 2 runs only when stage 1 flags an error and returns
taxonomy-validated code assignments. Each stage allows one corrective
retry: a reformat request on unparseable output, or a fix-codes request
when stage 2 names codes outside the taxonomy.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

from .errors import (
    BackendError,
    EmbeddingError,
    ParseError,
    RetrievalError,
    UnknownCodeError,
    ValidationError,
)
from .evalstats import AnnotationSet
from .llm import LLMBackend, PromptParts, prompt_digest
from .prompting import extract_json, load_template, taxonomy_block
from .retrieval import Index, RetrievalQuery, RetrievedPair, retrieve
from .taxonomy import Taxonomy

MODE_BASELINE = "baseline"
MODE_ENHANCED = "enhanced"
MODES = (MODE_BASELINE, MODE_ENHANCED)

MAX_EXEMPLARS = 5

STAGE1_TEMPLATE = "stage1_v1"
STAGE2_TEMPLATE = "stage2_v1"
REFORMAT_TEMPLATE = "reformat_v1"
FIX_CODES_TEMPLATE = "fix_codes_v1"

STAGE1_SCHEMA = '{"has_error": true or false, "summary": "string", "reasoning": "string"}'
STAGE2_SCHEMA = '{"errors": [{"code": "code-id", "confidence": 0.0 to 1.0, "justification": "string"}]}'

# Metadata keys that double as retrieval filter fields.
_FILTER_KEYS = ("recipient_name", "department", "specialty")


@dataclass(frozen=True)
class GuardrailInput:
    """One draft to check, with the chart context available at drafting time."""

    patient_message: str
    llm_draft: str
    metadata: dict[str, str] = field(default_factory=dict)
    mode: str = MODE_BASELINE
    retrieved_context: tuple[RetrievedPair, ...] = ()
    thread_id: str | None = None
    message_id: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.patient_message.strip():
            raise ValidationError("patient_message must be non-empty")
        if not self.llm_draft.strip():
            raise ValidationError("llm_draft must be non-empty")
        if self.mode == MODE_BASELINE and self.retrieved_context:
            raise ValidationError("baseline mode must not carry retrieved context")
        if len(self.retrieved_context) > MAX_EXEMPLARS:
            raise ValidationError(
                f"at most {MAX_EXEMPLARS} exemplars allowed, got {len(self.retrieved_context)}"
            )


@dataclass(frozen=True)
class Stage1Finding:
    has_error: bool
    summary: str
    reasoning: str


@dataclass(frozen=True)
class ErrorAssignment:
    code_id: str
    confidence: float
    justification: str


@dataclass(frozen=True)
class Provenance:
    mode: str
    model_id: str
    taxonomy_version: int
    retrieved_ids: tuple[str, ...]
    prompt_digests: dict[str, list[str]]
    template_versions: dict[str, str]
    timings_ms: dict[str, float]
    warnings: tuple[str, ...] = ()
    message_id: str | None = None


@dataclass(frozen=True)
class GuardrailVerdict:
    stage1: Stage1Finding
    assignments: tuple[ErrorAssignment, ...]
    provenance: Provenance

    def __post_init__(self) -> None:
        if self.stage1.has_error != bool(self.assignments):
            raise ValidationError("assignments must be empty iff stage 1 found no error")
        codes = [a.code_id for a in self.assignments]
        if len(set(codes)) != len(codes):
            raise ValidationError("assignment code ids must be distinct")


@dataclass(frozen=True)
class JudgeConfig:
    k: int = 5
    relax_filters: bool = False
    fail_hard_on_retrieval_error: bool = False


# --- prompt assembly -------------------------------------------------------


def _metadata_block(metadata: dict[str, str]) -> str:
    items = [(k, v) for k, v in sorted(metadata.items()) if str(v).strip()]
    if not items:
        return "(none provided)"
    return "\n".join(f"{k}: {v}" for k, v in items)


def _context_block(pairs: Sequence[RetrievedPair]) -> str:
    lines = [
        "",
        "Archived exchanges from the same practice, most similar first. They are "
        "background precedent only: do not quote them, do not imitate them, and do "
        "not grade the draft by direct comparison; use them to ground your sense of "
        "how similar messages are usually handled.",
        "",
    ]
    for p in pairs:
        lines.append(f"Exemplar {p.rank} (similarity {p.similarity:.4f}):")
        lines.append(f"Patient message: {p.patient_message}")
        lines.append(f"Clinician response: {p.response_text}")
        lines.append("")
    return "\n".join(lines).rstrip()


_NO_PRECEDENT = (
    "\nNo similar archived exchanges were found for this message; "
    "judge the draft on its own merits."
)


def assemble_stage1_prompt(inp: GuardrailInput, t: Taxonomy) -> list[tuple[str, str]]:
    """Render the stage-1 prompt; enhanced mode appends the exemplar block."""
    if len(inp.retrieved_context) > MAX_EXEMPLARS:
        raise ValidationError(f"at most {MAX_EXEMPLARS} exemplars allowed")
    if inp.mode == MODE_ENHANCED:
        context = _context_block(inp.retrieved_context) if inp.retrieved_context else _NO_PRECEDENT
    else:
        context = ""
    template = load_template(STAGE1_TEMPLATE)
    return template.render(
        {
            "domain_names": ", ".join(d.name for d in t.domains),
            "patient_message": inp.patient_message,
            "llm_draft": inp.llm_draft,
            "metadata_block": _metadata_block(inp.metadata),
            "context_block": context,
        }
    )


def assemble_stage2_prompt(
    inp: GuardrailInput, finding: Stage1Finding, t: Taxonomy
) -> list[tuple[str, str]]:
    template = load_template(STAGE2_TEMPLATE)
    return template.render(
        {
            "taxonomy_block": taxonomy_block(t),
            "patient_message": inp.patient_message,
            "llm_draft": inp.llm_draft,
            "summary": finding.summary,
            "reasoning": finding.reasoning,
        }
    )


def _retry_parts(
    parts: PromptParts, previous_response: str, template_name: str, values: dict[str, str]
) -> list[tuple[str, str]]:
    follow_up = load_template(template_name).render(values)
    return list(parts) + [("assistant", previous_response)] + follow_up


# --- structured-output parsing ---------------------------------------------


def parse_stage1(text: str) -> Stage1Finding:
    obj = extract_json(text)
    has_error = obj.get("has_error")
    if not isinstance(has_error, bool):
        raise ParseError("stage-1 output: has_error must be a boolean")
    summary = obj.get("summary", "")
    reasoning = obj.get("reasoning", "")
    if not isinstance(summary, str) or not isinstance(reasoning, str):
        raise ParseError("stage-1 output: summary and reasoning must be strings")
    if has_error and not summary.strip():
        raise ParseError("stage-1 output: summary required when has_error is true")
    return Stage1Finding(has_error=has_error, summary=summary, reasoning=reasoning)


def parse_stage2(text: str) -> list[ErrorAssignment]:
    obj = extract_json(text)
    errors = obj.get("errors")
    if not isinstance(errors, list) or not errors:
        raise ParseError("stage-2 output: 'errors' must be a non-empty list")
    out: list[ErrorAssignment] = []
    for i, entry in enumerate(errors):
        if not isinstance(entry, dict) or not isinstance(entry.get("code"), str):
            raise ParseError(f"stage-2 output: errors[{i}] needs a string 'code'")
        confidence = entry.get("confidence")
        if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
            raise ParseError(f"stage-2 output: errors[{i}] needs a numeric 'confidence'")
        justification = entry.get("justification", "")
        if not isinstance(justification, str):
            raise ParseError(f"stage-2 output: errors[{i}] justification must be a string")
        out.append(
            ErrorAssignment(
                code_id=entry["code"], confidence=float(confidence), justification=justification
            )
        )
    return out


def _dedupe_assignments(assignments: Sequence[ErrorAssignment]) -> tuple[ErrorAssignment, ...]:
    """Collapse repeated codes, keeping the highest confidence per code."""
    best: dict[str, ErrorAssignment] = {}
    order: list[str] = []
    for a in assignments:
        if a.code_id not in best:
            best[a.code_id] = a
            order.append(a.code_id)
        elif a.confidence > best[a.code_id].confidence:
            best[a.code_id] = a
    return tuple(best[c] for c in order)


# --- stages ----------------------------------------------------------------


def run_stage1(
    inp: GuardrailInput, t: Taxonomy, backend: LLMBackend
) -> tuple[Stage1Finding, list[str]]:
    """Run the error identifier; one reformat retry on unparseable output.

    Returns the finding plus the digests of every prompt sent.
    """
    parts = assemble_stage1_prompt(inp, t)
    digests = [prompt_digest(parts)]
    response = backend.generate(parts)
    try:
        return parse_stage1(response), digests
    except ParseError:
        retry = _retry_parts(parts, response, REFORMAT_TEMPLATE,
                             {"previous_response": response, "schema": STAGE1_SCHEMA})
        digests.append(prompt_digest(retry))
        return parse_stage1(backend.generate(retry)), digests


def _validated_assignments(
    assignments: Sequence[ErrorAssignment], t: Taxonomy
) -> tuple[ErrorAssignment, ...] | list[str]:
    """Deduped assignments if all codes are valid, else the unknown code ids."""
    unknown = sorted({a.code_id for a in assignments if not t.has_code(a.code_id)})
    if unknown:
        return unknown
    for a in assignments:
        if not 0.0 <= a.confidence <= 1.0:
            raise ValidationError(
                f"confidence {a.confidence} for code {a.code_id!r} outside [0, 1]"
            )
    return _dedupe_assignments(assignments)


def run_stage2(
    inp: GuardrailInput, finding: Stage1Finding, t: Taxonomy, backend: LLMBackend
) -> tuple[tuple[ErrorAssignment, ...], list[str]]:
    """Classify the flagged error; one corrective retry, then hard error.

    The single retry budget covers either a reformat (unparseable output) or
    a fix-codes round (codes missing from the taxonomy).
    """
    if not finding.has_error:
        raise ValidationError("stage 2 requires a stage-1 finding with has_error=true")
    parts = assemble_stage2_prompt(inp, finding, t)
    digests = [prompt_digest(parts)]
    response = backend.generate(parts)
    try:
        assignments = parse_stage2(response)
    except ParseError:
        retry = _retry_parts(parts, response, REFORMAT_TEMPLATE,
                             {"previous_response": response, "schema": STAGE2_SCHEMA})
        digests.append(prompt_digest(retry))
        assignments = parse_stage2(backend.generate(retry))
        result = _validated_assignments(assignments, t)
        if isinstance(result, list):
            raise UnknownCodeError(
                f"stage-2 output names unknown codes after retry: {result}"
            ) from None
        return result, digests

    result = _validated_assignments(assignments, t)
    if not isinstance(result, list):
        return result, digests
    retry = _retry_parts(
        parts,
        response,
        FIX_CODES_TEMPLATE,
        {"unknown_codes": ", ".join(result), "valid_codes": "\n".join(t.code_ids())},
    )
    digests.append(prompt_digest(retry))
    assignments = parse_stage2(backend.generate(retry))
    result = _validated_assignments(assignments, t)
    if isinstance(result, list):
        raise UnknownCodeError(f"stage-2 output names unknown codes after retry: {result}")
    return result, digests


# --- full pipeline ----------------------------------------------------------


def check(
    inp: GuardrailInput,
    t: Taxonomy,
    backend: LLMBackend,
    retriever: Index | None = None,
    config: JudgeConfig | None = None,
) -> GuardrailVerdict:
    """Run the full guardrail over one input and assemble the verdict.

    Enhanced mode populates the exemplar context from the retriever first
    (filters built from the input metadata, the input's own thread
    excluded); retrieval failures degrade to an empty context with a
    provenance warning unless configured to fail hard.
    """
    config = config or JudgeConfig()
    warnings: list[str] = []
    timings: dict[str, float] = {}
    started = time.perf_counter()

    if inp.mode == MODE_ENHANCED:
        if retriever is None:
            raise ValidationError("enhanced mode requires a retriever")
        t0 = time.perf_counter()
        filters = {
            key: inp.metadata[key]
            for key in _FILTER_KEYS
            if str(inp.metadata.get(key, "")).strip()
        }
        query = RetrievalQuery(
            query_text=inp.patient_message,
            k=config.k,
            exclude_thread_id=inp.thread_id,
            **filters,
        )
        try:
            pairs = retrieve(retriever, query, relax_filters=config.relax_filters)
        except (RetrievalError, EmbeddingError, BackendError) as exc:
            if config.fail_hard_on_retrieval_error:
                raise
            warnings.append(f"retrieval degraded to empty context: {exc}")
            pairs = []
        inp = dataclasses.replace(inp, retrieved_context=tuple(pairs))
        timings["retrieval_ms"] = (time.perf_counter() - t0) * 1000.0

    prompt_digests: dict[str, list[str]] = {}
    t0 = time.perf_counter()
    finding, prompt_digests["stage1"] = run_stage1(inp, t, backend)
    timings["stage1_ms"] = (time.perf_counter() - t0) * 1000.0

    assignments: tuple[ErrorAssignment, ...] = ()
    if finding.has_error:
        t0 = time.perf_counter()
        assignments, prompt_digests["stage2"] = run_stage2(inp, finding, t, backend)
        timings["stage2_ms"] = (time.perf_counter() - t0) * 1000.0
    timings["total_ms"] = (time.perf_counter() - started) * 1000.0

    templates = {
        "stage1": load_template(STAGE1_TEMPLATE),
        "stage2": load_template(STAGE2_TEMPLATE),
    }
    provenance = Provenance(
        mode=inp.mode,
        model_id=backend.model_id,
        taxonomy_version=t.version,
        retrieved_ids=tuple(p.message_id for p in inp.retrieved_context),
        prompt_digests=prompt_digests,
        template_versions={k: f"{v.name}:{v.sha256[:12]}" for k, v in templates.items()},
        timings_ms=timings,
        warnings=tuple(warnings),
        message_id=inp.message_id,
    )
    return GuardrailVerdict(stage1=finding, assignments=assignments, provenance=provenance)


def check_batch(
    inputs: Iterable[GuardrailInput],
    t: Taxonomy,
    backend: LLMBackend,
    retriever: Index | None = None,
    config: JudgeConfig | None = None,
) -> list[GuardrailVerdict]:
    """Sequential batch evaluation; inputs are processed in order."""
    return [check(inp, t, backend, retriever=retriever, config=config) for inp in inputs]


# --- verdict records --------------------------------------------------------


def verdict_to_record(verdict: GuardrailVerdict, include_timings: bool = False) -> dict:
    """Canonical verdict record. Timings are operational telemetry and stay
    out of the record by default so identical runs serialize identically."""
    prov = {
        "mode": verdict.provenance.mode,
        "model_id": verdict.provenance.model_id,
        "taxonomy_version": verdict.provenance.taxonomy_version,
        "retrieved_ids": list(verdict.provenance.retrieved_ids),
        "prompt_digests": verdict.provenance.prompt_digests,
        "template_versions": verdict.provenance.template_versions,
        "warnings": list(verdict.provenance.warnings),
    }
    if include_timings:
        prov["timings_ms"] = verdict.provenance.timings_ms
    return {
        "message_id": verdict.provenance.message_id,
        "stage1": {
            "has_error": verdict.stage1.has_error,
            "summary": verdict.stage1.summary,
            "reasoning": verdict.stage1.reasoning,
        },
        "assignments": [
            {"code_id": a.code_id, "confidence": a.confidence, "justification": a.justification}
            for a in verdict.assignments
        ],
        "provenance": prov,
    }


def verdict_from_record(record: dict) -> GuardrailVerdict:
    prov = record["provenance"]
    return GuardrailVerdict(
        stage1=Stage1Finding(**record["stage1"]),
        assignments=tuple(ErrorAssignment(**a) for a in record["assignments"]),
        provenance=Provenance(
            mode=prov["mode"],
            model_id=prov["model_id"],
            taxonomy_version=prov["taxonomy_version"],
            retrieved_ids=tuple(prov["retrieved_ids"]),
            prompt_digests=prov["prompt_digests"],
            template_versions=prov["template_versions"],
            timings_ms=prov.get("timings_ms", {}),
            warnings=tuple(prov.get("warnings", ())),
            message_id=record.get("message_id"),
        ),
    )


def write_verdicts(
    verdicts: Iterable[GuardrailVerdict], path: Union[str, Path], include_timings: bool = False
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(verdict_to_record(v, include_timings), sort_keys=True) + "\n")


def load_verdicts(path: Union[str, Path]) -> list[GuardrailVerdict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(verdict_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad verdict record: {exc}") from exc
    return out


def annotation_set_from_verdicts(
    verdicts: Sequence[GuardrailVerdict], source: str
) -> AnnotationSet:
    """Collapse verdicts into a per-message label map keyed by message_id."""
    labels: dict[str, frozenset[str]] = {}
    for v in verdicts:
        mid = v.provenance.message_id
        if mid is None:
            raise ValidationError("verdict lacks a message_id; cannot build annotations")
        if mid in labels:
            raise ValidationError(f"duplicate message_id {mid!r} among verdicts")
        labels[mid] = frozenset(a.code_id for a in v.assignments)
    return AnnotationSet(source=source, labels=labels)

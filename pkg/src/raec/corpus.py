"""Corpus ingestion and sampling.

Raw records arrive as JSON-lines, one object per line, with snake_case
fields: thread_id, patient_message, llm_prompt, llm_draft, clinician_reply,
date_sent, recipient_name, message_sender, department, specialty, plus
record_type ("message" for patient messages; anything else is treated as a
system/administrative event and rejected). Clean triplets serialize back to
the same schema plus an optional draft_utilized boolean.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ValidationError

RECORD_TYPE_MESSAGE = "message"

SAMPLING_ALGORITHM = "numpy-pcg64"

# Fields that must be present and non-empty for a triplet to be retained.
_REQUIRED_FIELDS = (
    "thread_id",
    "patient_message",
    "llm_draft",
    "clinician_reply",
    "date_sent",
    "specialty",
)

_OPTIONAL_TEXT_FIELDS = ("llm_prompt", "recipient_name", "message_sender", "department")


@dataclass(frozen=True)
class MessageTriplet:
    """One discrete communication turn: patient message, draft, clinician reply."""

    thread_id: str
    patient_message: str
    llm_prompt: str
    llm_draft: str
    clinician_reply: str
    date_sent: datetime
    recipient_name: str
    message_sender: str
    department: str
    specialty: str
    draft_utilized: bool | None = None

    def to_record(self) -> dict:
        out = {
            "thread_id": self.thread_id,
            "patient_message": self.patient_message,
            "llm_prompt": self.llm_prompt,
            "llm_draft": self.llm_draft,
            "clinician_reply": self.clinician_reply,
            "date_sent": self.date_sent.isoformat(),
            "recipient_name": self.recipient_name,
            "message_sender": self.message_sender,
            "department": self.department,
            "specialty": self.specialty,
        }
        if self.draft_utilized is not None:
            out["draft_utilized"] = self.draft_utilized
        return out


@dataclass
class IngestReport:
    accepted_count: int = 0
    rejected_count: int = 0
    rejection_reasons: Counter = field(default_factory=Counter)
    duplicates_collapsed: int = 0

    def to_dict(self) -> dict:
        return {
            "accepted_count": self.accepted_count,
            "rejected_count": self.rejected_count,
            "rejection_reasons": dict(sorted(self.rejection_reasons.items())),
            "duplicates_collapsed": self.duplicates_collapsed,
        }


def _reject_reason(record: Mapping) -> str | None:
    """First applicable rejection reason, or None if the record is clean."""
    rtype = record.get("record_type")
    if rtype is None or (isinstance(rtype, str) and not rtype.strip()):
        return "missing field: record_type"
    if rtype != RECORD_TYPE_MESSAGE:
        return "system/administrative"
    for name in _REQUIRED_FIELDS:
        value = record.get(name)
        if value is None or (isinstance(value, str) and not value.strip()):
            return f"missing field: {name}"
    try:
        _parse_date(record["date_sent"])
    except (ValueError, TypeError):
        return "invalid date_sent"
    utilized = record.get("draft_utilized")
    if utilized is not None and not isinstance(utilized, bool):
        return "invalid draft_utilized"
    return None


def _parse_date(value: object) -> datetime:
    if isinstance(value, datetime):
        return value
    return datetime.fromisoformat(str(value))


def ingest(records: Iterable[Union[Mapping, str]]) -> tuple[list[MessageTriplet], IngestReport]:
    """Filter a raw record stream down to complete triplets.

    Each input item is a parsed object or a JSON line. Malformed items are
    rejected (reason "malformed record"), never fatal. Every rejection is
    attributed to exactly one reason; accepted + rejected equals the number
    of input records.
    """
    triplets: list[MessageTriplet] = []
    report = IngestReport()
    for item in records:
        if isinstance(item, str):
            if not item.strip():
                continue  # blank lines are not records
            try:
                parsed = json.loads(item)
            except json.JSONDecodeError:
                report.rejected_count += 1
                report.rejection_reasons["malformed record"] += 1
                continue
        else:
            parsed = item
        if not isinstance(parsed, Mapping):
            report.rejected_count += 1
            report.rejection_reasons["malformed record"] += 1
            continue
        reason = _reject_reason(parsed)
        if reason is not None:
            report.rejected_count += 1
            report.rejection_reasons[reason] += 1
            continue
        report.accepted_count += 1
        triplets.append(
            MessageTriplet(
                thread_id=str(parsed["thread_id"]),
                patient_message=str(parsed["patient_message"]),
                llm_prompt=str(parsed.get("llm_prompt", "") or ""),
                llm_draft=str(parsed["llm_draft"]),
                clinician_reply=str(parsed["clinician_reply"]),
                date_sent=_parse_date(parsed["date_sent"]),
                recipient_name=str(parsed.get("recipient_name", "") or ""),
                message_sender=str(parsed.get("message_sender", "") or ""),
                department=str(parsed.get("department", "") or ""),
                specialty=str(parsed["specialty"]),
                draft_utilized=parsed.get("draft_utilized"),
            )
        )
    return triplets, report


def ingest_path(path: Union[str, Path]) -> tuple[list[MessageTriplet], IngestReport]:
    with open(path, "r", encoding="utf-8") as fh:
        return ingest(fh)


def dedupe(
    triplets: Sequence[MessageTriplet], text_field: str = "patient_message"
) -> list[MessageTriplet]:
    """Collapse duplicates sharing an identical (text, date_sent) pair.

    The survivor is the earliest valid message; within an identical key that
    is the first in stable input order. The key's text side defaults to the
    patient message and is configurable.
    """
    seen: set[tuple[str, datetime]] = set()
    out: list[MessageTriplet] = []
    for t in triplets:
        key = (getattr(t, text_field), t.date_sent)
        if key in seen:
            continue
        seen.add(key)
        out.append(t)
    return out


def largest_remainder_allocation(counts: Mapping[str, int], n: int) -> dict[str, int]:
    """Apportion n across strata proportionally to counts, largest remainder.

    Deterministic: leftover seats go to the largest fractional remainders,
    ties broken by stratum key ascending. Allocations sum exactly to n and
    never exceed a stratum's population.
    """
    total = sum(counts.values())
    if total == 0:
        raise ValidationError("cannot allocate a sample over an empty population")
    if n > total:
        raise ValidationError(f"sample size {n} exceeds population {total}")
    quotas = {k: n * c / total for k, c in counts.items()}
    alloc = {k: int(q) for k, q in quotas.items()}
    leftover = n - sum(alloc.values())
    remainders = sorted(counts, key=lambda k: (-(quotas[k] - alloc[k]), k))
    for k in remainders[:leftover]:
        alloc[k] += 1
    return alloc


def stratified_sample(
    triplets: Sequence[MessageTriplet],
    n: int,
    stratum: str = "specialty",
    seed: int = 0,
) -> tuple[list[MessageTriplet], dict]:
    """Sample n triplets preserving the observed stratum distribution.

    Per-stratum allocation uses largest-remainder apportionment; selection
    within a stratum is uniform without replacement under a seeded PCG64
    generator, so the same inputs and seed always give the same sample.
    Returns the sample and a manifest recording seed, n, stratum field,
    generator algorithm, and per-stratum allocation.
    """
    if n < 0:
        raise ValidationError("sample size must be non-negative")
    groups: dict[str, list[int]] = defaultdict(list)
    for i, t in enumerate(triplets):
        groups[str(getattr(t, stratum))].append(i)
    alloc = largest_remainder_allocation({k: len(v) for k, v in groups.items()}, n)
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen: list[int] = []
    for key in sorted(groups):
        k = alloc[key]
        if k == 0:
            continue
        members = groups[key]
        picks = rng.choice(len(members), size=k, replace=False)
        chosen.extend(members[i] for i in sorted(picks))
    manifest = {
        "seed": seed,
        "n": n,
        "stratum_field": stratum,
        "algorithm": SAMPLING_ALGORITHM,
        "allocation": {k: alloc[k] for k in sorted(alloc)},
    }
    return [triplets[i] for i in chosen], manifest


def balanced_sample(
    scored: Sequence[tuple[MessageTriplet, bool]],
    n: int,
    seed: int = 0,
) -> tuple[list[MessageTriplet], dict]:
    """1:1 sample over (has_error, no_error) classes, n/2 each, seeded.

    If a class has fewer than n/2 members the whole class is taken and the
    shortfall is reported in the manifest; the other class is never used to
    backfill.
    """
    if n % 2 != 0:
        raise ValidationError(f"balanced sample size must be even, got {n}")
    error_idx = [i for i, (_, has_err) in enumerate(scored) if has_err]
    clean_idx = [i for i, (_, has_err) in enumerate(scored) if not has_err]
    if n > 0 and not error_idx and not clean_idx:
        raise ValidationError("both classes are empty")
    rng = np.random.Generator(np.random.PCG64(seed))
    half = n // 2
    chosen: list[int] = []
    taken: dict[str, int] = {}
    for name, members in (("error", error_idx), ("no_error", clean_idx)):
        k = min(half, len(members))
        taken[name] = k
        if k:
            picks = rng.choice(len(members), size=k, replace=False)
            chosen.extend(members[i] for i in sorted(picks))
    manifest = {
        "seed": seed,
        "n": n,
        "algorithm": SAMPLING_ALGORITHM,
        "per_class": taken,
        "shortfall": (half - taken["error"]) + (half - taken["no_error"]),
    }
    return [scored[i][0] for i in chosen], manifest


def write_triplets(triplets: Iterable[MessageTriplet], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(t.to_record(), sort_keys=True) + "\n")


def load_triplets(path: Union[str, Path]) -> list[MessageTriplet]:
    """Read clean triplet JSON-lines (the ingest output schema)."""
    out: list[MessageTriplet] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            rec.setdefault("record_type", RECORD_TYPE_MESSAGE)
            reason = _reject_reason(rec)
            if reason is not None:
                raise ValidationError(f"{path}:{lineno}: {reason}")
            out.append(
                MessageTriplet(
                    thread_id=str(rec["thread_id"]),
                    patient_message=str(rec["patient_message"]),
                    llm_prompt=str(rec.get("llm_prompt", "") or ""),
                    llm_draft=str(rec["llm_draft"]),
                    clinician_reply=str(rec["clinician_reply"]),
                    date_sent=_parse_date(rec["date_sent"]),
                    recipient_name=str(rec.get("recipient_name", "") or ""),
                    message_sender=str(rec.get("message_sender", "") or ""),
                    department=str(rec.get("department", "") or ""),
                    specialty=str(rec["specialty"]),
                    draft_utilized=rec.get("draft_utilized"),
                )
            )
    return out


def with_utilization(triplet: MessageTriplet, utilized: bool) -> MessageTriplet:
    return replace(triplet, draft_utilized=utilized)

"""Aggregate verdicts into summary artifacts.

Every report has two faces: a machine-readable dict (serialized as JSON)
and an aligned plain-text table. Per-code frequencies default to a
per-message denominator (a code counts once per message in its group); a
per-error-instance denominator is available behind a flag. No chart
rendering here: the frequency tables contain everything a bar chart would
show.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

from .corpus import MessageTriplet
from .errors import ValidationError
from .evalstats import ConfusionCounts, MetricsRow, metrics
from .judge import GuardrailVerdict
from .taxonomy import LEVEL_DOMAIN, Taxonomy, project


@dataclass(frozen=True)
class ErrorSummary:
    total_messages: int
    cases_with_error: int
    error_rate: float
    total_errors: int
    domain_counts: dict[str, int]  # domain_id -> messages with >= 1 code in the domain

    def to_dict(self) -> dict:
        return {
            "total_messages": self.total_messages,
            "cases_with_error": self.cases_with_error,
            "error_rate": self.error_rate,
            "total_errors": self.total_errors,
            "domain_counts": {k: self.domain_counts[k] for k in sorted(self.domain_counts)},
        }


@dataclass(frozen=True)
class FrequencyDelta:
    code_id: str
    freq_utilized: float  # percent of utilized-group messages exhibiting the code
    freq_discarded: float
    delta_pp: float  # freq_utilized - freq_discarded, percentage points

    def to_dict(self) -> dict:
        return {
            "code_id": self.code_id,
            "freq_utilized": self.freq_utilized,
            "freq_discarded": self.freq_discarded,
            "delta_pp": self.delta_pp,
        }


def summarize(verdicts: Sequence[GuardrailVerdict], t: Taxonomy) -> ErrorSummary:
    """Error counts in the Table-1 shape: cases, rate, per-domain message counts.

    A message counts once per domain its assignments project into, so the
    domain rows may sum to more than cases_with_error.
    """
    domain_counts = {d: 0 for d in t.domain_ids()}
    cases = 0
    total_errors = 0
    for v in verdicts:
        codes = {a.code_id for a in v.assignments}
        total_errors += len(v.assignments)
        if codes:
            cases += 1
            for domain_id in project(codes, LEVEL_DOMAIN, t):
                domain_counts[domain_id] += 1
    n = len(verdicts)
    return ErrorSummary(
        total_messages=n,
        cases_with_error=cases,
        error_rate=(cases / n) if n else 0.0,
        total_errors=total_errors,
        domain_counts=domain_counts,
    )


def relative_frequencies(verdicts: Sequence[GuardrailVerdict]) -> dict[str, float]:
    """Share of total error instances per code; shares sum to 1."""
    counts: dict[str, int] = {}
    total = 0
    for v in verdicts:
        for a in v.assignments:
            counts[a.code_id] = counts.get(a.code_id, 0) + 1
            total += 1
    if total == 0:
        raise ValidationError("no error instances; relative frequencies undefined")
    return {code: counts[code] / total for code in sorted(counts)}


def top_frequencies(frequencies: Mapping[str, float], k: int = 10) -> list[tuple[str, float]]:
    """Top-k codes by share, descending, ties broken by code id."""
    return sorted(frequencies.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


@dataclass(frozen=True)
class UtilizationGroup:
    n_messages: int
    total_errors: int
    errors_per_draft: float


@dataclass(frozen=True)
class UtilizationReport:
    utilized: UtilizationGroup
    discarded: UtilizationGroup
    deltas: list[FrequencyDelta]
    denominator: str  # "per-message" | "per-error-instance"

    def to_dict(self) -> dict:
        return {
            "utilized": self.utilized.__dict__,
            "discarded": self.discarded.__dict__,
            "denominator": self.denominator,
            "deltas": [d.to_dict() for d in self.deltas],
        }


def _group_frequencies(
    code_messages: dict[str, int], code_instances: dict[str, int],
    n_messages: int, total_instances: int, per_message: bool,
) -> dict[str, float]:
    if per_message:
        return {c: 100.0 * k / n_messages for c, k in code_messages.items()}
    return {c: 100.0 * k / total_instances for c, k in code_instances.items()}


def stratify_by_utilization(
    verdicts: Sequence[GuardrailVerdict],
    triplets: Sequence[MessageTriplet],
    per_message_denominator: bool = True,
) -> UtilizationReport:
    """Compare error rates between utilized and discarded drafts.

    Verdicts pair with triplets by position. Every triplet must carry the
    draft_utilized flag; missing flags fail loudly, listing the offending
    thread ids. errors_per_draft is total assignments over group size.
    """
    if len(verdicts) != len(triplets):
        raise ValidationError(
            f"{len(verdicts)} verdicts vs {len(triplets)} triplets; cannot pair them"
        )
    missing = [tr.thread_id for tr in triplets if tr.draft_utilized is None]
    if missing:
        shown = ", ".join(missing[:10]) + ("..." if len(missing) > 10 else "")
        raise ValidationError(
            f"{len(missing)} messages lack the draft_utilized flag: {shown}"
        )

    stats = {
        True: {"n": 0, "instances": 0, "code_messages": {}, "code_instances": {}},
        False: {"n": 0, "instances": 0, "code_messages": {}, "code_instances": {}},
    }
    for v, tr in zip(verdicts, triplets):
        g = stats[bool(tr.draft_utilized)]
        g["n"] += 1
        codes_seen = set()
        for a in v.assignments:
            g["instances"] += 1
            g["code_instances"][a.code_id] = g["code_instances"].get(a.code_id, 0) + 1
            codes_seen.add(a.code_id)
        for code in codes_seen:
            g["code_messages"][code] = g["code_messages"].get(code, 0) + 1

    for used, name in ((True, "utilized"), (False, "discarded")):
        if stats[used]["n"] == 0:
            raise ValidationError(f"the {name}-drafts group is empty")

    freq = {}
    for used in (True, False):
        g = stats[used]
        freq[used] = _group_frequencies(
            g["code_messages"], g["code_instances"], g["n"], max(g["instances"], 1),
            per_message_denominator,
        )
    all_codes = sorted(set(freq[True]) | set(freq[False]))
    deltas = [
        FrequencyDelta(
            code_id=code,
            freq_utilized=freq[True].get(code, 0.0),
            freq_discarded=freq[False].get(code, 0.0),
            delta_pp=freq[True].get(code, 0.0) - freq[False].get(code, 0.0),
        )
        for code in all_codes
    ]
    deltas.sort(key=lambda d: (-abs(d.delta_pp), d.code_id))
    return UtilizationReport(
        utilized=UtilizationGroup(
            n_messages=stats[True]["n"],
            total_errors=stats[True]["instances"],
            errors_per_draft=stats[True]["instances"] / stats[True]["n"],
        ),
        discarded=UtilizationGroup(
            n_messages=stats[False]["n"],
            total_errors=stats[False]["instances"],
            errors_per_draft=stats[False]["instances"] / stats[False]["n"],
        ),
        deltas=deltas,
        denominator="per-message" if per_message_denominator else "per-error-instance",
    )


# --- plain-text rendering ----------------------------------------------------


def _fmt(value: float | None, places: int = 3) -> str:
    return "n/a" if value is None else f"{value:.{places}f}"


def _table(rows: list[list[str]], header: list[str]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    def line(cells: list[str]) -> str:
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def render_error_summary(summary: ErrorSummary, t: Taxonomy) -> str:
    rows = [
        ["Cases with >= 1 error", str(summary.cases_with_error)],
        ["Error rate (%)", f"{100.0 * summary.error_rate:.1f}%"],
        ["Total error instances", str(summary.total_errors)],
    ]
    rows += [
        [t.domain(d).name, str(summary.domain_counts[d])]
        for d in sorted(summary.domain_counts)
    ]
    return _table(rows, ["Category", "Count"])


def render_metrics_table(columns: Sequence[tuple[str, ConfusionCounts]]) -> str:
    """Count and metric rows, one column per named count set."""
    derived: list[tuple[str, MetricsRow]] = [(name, metrics(c)) for name, c in columns]
    header = ["Metric"] + [name for name, _ in columns]
    rows = [
        ["TP"] + [str(c.tp) for _, c in columns],
        ["FP"] + [str(c.fp) for _, c in columns],
        ["FN"] + [str(c.fn) for _, c in columns],
        ["TN"] + [str(c.tn) for _, c in columns],
        ["Sensitivity"] + [_fmt(m.sensitivity) for _, m in derived],
        ["Specificity"] + [_fmt(m.specificity) for _, m in derived],
        ["PPV"] + [_fmt(m.ppv) for _, m in derived],
        ["NPV"] + [_fmt(m.npv) for _, m in derived],
        ["Accuracy"] + [_fmt(m.accuracy) for _, m in derived],
        ["F1"] + [_fmt(m.f1) for _, m in derived],
    ]
    return _table(rows, header)


def render_frequency_table(frequencies: Mapping[str, float], k: int = 10) -> str:
    rows = [[code, f"{100.0 * share:.1f}%"] for code, share in top_frequencies(frequencies, k)]
    return _table(rows, ["Error code", "Share of error instances"])


def render_utilization_report(report: UtilizationReport, k: int = 10) -> str:
    group_rows = [
        ["utilized", str(report.utilized.n_messages), str(report.utilized.total_errors),
         f"{report.utilized.errors_per_draft:.3f}"],
        ["discarded", str(report.discarded.n_messages), str(report.discarded.total_errors),
         f"{report.discarded.errors_per_draft:.3f}"],
    ]
    head = _table(group_rows, ["Group", "Messages", "Errors", "Errors/draft"])
    delta_rows = [
        [d.code_id, f"{d.freq_utilized:.1f}%", f"{d.freq_discarded:.1f}%", f"{d.delta_pp:+.1f}"]
        for d in report.deltas[:k]
    ]
    deltas = _table(
        delta_rows,
        ["Error code", f"Utilized ({report.denominator})", "Discarded", "Delta (pp)"],
    )
    return head + "\n\n" + deltas


def write_json_report(payload: dict, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

"""Agreement and performance statistics for guardrail validation.

Covers message-level concordance at any hierarchy level, McNemar's paired
test (exact binomial and chi-square with continuity correction), per-label
confusion grids whose true-negative cells count every message-label
combination in the chosen universe, the derived metric rows, and Kendall's
tau-b.

Undefined metrics (zero denominators) are explicit ``None``, never zero, so
averages are not silently deflated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import ValidationError
from .taxonomy import LEVELS, Taxonomy, project

METHOD_EXACT = "exact"
METHOD_CHI2_CC = "chi-square-cc"


@dataclass(frozen=True)
class AnnotationSet:
    """Per-message label sets from one source (physician, baseline, enhanced, ...)."""

    source: str
    labels: dict[str, frozenset[str]]

    def message_ids(self) -> set[str]:
        return set(self.labels)


def make_annotation_set(source: str, labels: Mapping[str, Sequence[str]]) -> AnnotationSet:
    return AnnotationSet(
        source=source,
        labels={str(mid): frozenset(codes) for mid, codes in labels.items()},
    )


def load_annotation_set(path: Union[str, Path], source: str | None = None) -> AnnotationSet:
    """Read JSON-lines {message_id, source, codes:[...]}; one line per message."""
    labels: dict[str, frozenset[str]] = {}
    seen_source = source
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                mid = str(rec["message_id"])
                codes = frozenset(str(c) for c in rec.get("codes", []))
                line_source = str(rec.get("source", seen_source or "unknown"))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad annotation record: {exc}") from exc
            if seen_source is None:
                seen_source = line_source
            elif source is None and line_source != seen_source:
                raise ValidationError(
                    f"{path}:{lineno}: mixed sources ({line_source!r} vs {seen_source!r})"
                )
            if mid in labels:
                raise ValidationError(f"{path}:{lineno}: duplicate message_id {mid!r}")
            labels[mid] = codes
    return AnnotationSet(source=seen_source or "unknown", labels=labels)


def write_annotation_set(ann: AnnotationSet, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mid in sorted(ann.labels):
            rec = {"message_id": mid, "source": ann.source, "codes": sorted(ann.labels[mid])}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --- concordance ----------------------------------------------------------


@dataclass(frozen=True)
class ConcordanceResult:
    level: str
    source_a: str
    source_b: str
    per_message: dict[str, bool]
    concordant_count: int
    total: int

    @property
    def rate(self) -> float:
        return self.concordant_count / self.total if self.total else float("nan")

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "source_a": self.source_a,
            "source_b": self.source_b,
            "concordant_count": self.concordant_count,
            "total": self.total,
            "rate": self.rate,
            "per_message": {k: self.per_message[k] for k in sorted(self.per_message)},
        }


def concordance(a: AnnotationSet, b: AnnotationSet, level: str, t: Taxonomy) -> ConcordanceResult:
    """Strict per-message set equality of the two sources at a hierarchy level.

    Both-empty label sets agree. The two sources must cover the same
    message ids.
    """
    if a.message_ids() != b.message_ids():
        missing = sorted(a.message_ids() ^ b.message_ids())[:5]
        raise ValidationError(f"annotation sets cover different message ids, e.g. {missing}")
    per_message = {}
    for mid in a.labels:
        per_message[mid] = project(a.labels[mid], level, t) == project(b.labels[mid], level, t)
    return ConcordanceResult(
        level=level,
        source_a=a.source,
        source_b=b.source,
        per_message=per_message,
        concordant_count=sum(per_message.values()),
        total=len(per_message),
    )


# --- McNemar --------------------------------------------------------------


@dataclass(frozen=True)
class McNemarResult:
    b: int
    c: int
    statistic: float
    p_value: float
    method: str

    def to_dict(self) -> dict:
        return {
            "b": self.b,
            "c": self.c,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "method": self.method,
        }


def mcnemar(paired: Sequence[tuple[bool, bool]], method: str = METHOD_CHI2_CC) -> McNemarResult:
    """McNemar's test over paired (method_a_correct, method_b_correct) outcomes.

    Discordant counts: b = a-correct/b-wrong, c = a-wrong/b-correct.
    exact: p = min(1, 2 * BinomialCDF(min(b,c); b+c, 0.5)).
    chi-square-cc: statistic (|b-c|-1)^2/(b+c), p from the chi-square(1)
    survival function. b+c = 0 gives p = 1 under both methods.
    """
    if not paired:
        raise ValidationError("mcnemar requires at least one pair")
    b = sum(1 for x, y in paired if x and not y)
    c = sum(1 for x, y in paired if not x and y)
    n = b + c
    if method == METHOD_EXACT:
        if n == 0:
            return McNemarResult(b, c, 0.0, 1.0, method)
        k = min(b, c)
        tail = sum(math.comb(n, i) for i in range(k + 1))
        p = min(1.0, 2.0 * tail / (1 << n))
        return McNemarResult(b, c, float(k), p, method)
    if method == METHOD_CHI2_CC:
        if n == 0:
            return McNemarResult(b, c, 0.0, 1.0, method)
        statistic = (abs(b - c) - 1) ** 2 / n
        p = math.erfc(math.sqrt(statistic / 2.0))  # chi-square(1) survival
        return McNemarResult(b, c, statistic, p, method)
    raise ValidationError(f"unknown method {method!r}; use '{METHOD_EXACT}' or '{METHOD_CHI2_CC}'")


def mcnemar_from_concordance(
    reference_vs_a: ConcordanceResult, reference_vs_b: ConcordanceResult, method: str = METHOD_CHI2_CC
) -> McNemarResult:
    """Pair the two concordance runs message-by-message and test them."""
    if set(reference_vs_a.per_message) != set(reference_vs_b.per_message):
        raise ValidationError("concordance results cover different message ids")
    paired = [
        (reference_vs_a.per_message[mid], reference_vs_b.per_message[mid])
        for mid in sorted(reference_vs_a.per_message)
    ]
    return mcnemar(paired, method=method)


# --- confusion grid and metrics -------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    label_id: str
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"label_id": self.label_id, "tp": self.tp, "fp": self.fp,
                "fn": self.fn, "tn": self.tn}


def confusion(
    reference: AnnotationSet,
    predicted: AnnotationSet,
    level: str,
    universe: Sequence[str],
    t: Taxonomy,
) -> list[ConfusionCounts]:
    """Per-label confusion counts over every (message, label) grid cell.

    A label in neither source's projected set contributes a true negative,
    so per-label totals always equal the message count. Labels projected
    from either source that fall outside the universe are an error.
    """
    if level not in LEVELS:
        raise ValidationError(f"level must be one of {LEVELS}, got {level!r}")
    if reference.message_ids() != predicted.message_ids():
        missing = sorted(reference.message_ids() ^ predicted.message_ids())[:5]
        raise ValidationError(f"annotation sets cover different message ids, e.g. {missing}")
    universe = list(universe)
    if len(set(universe)) != len(universe):
        raise ValidationError("universe contains duplicate labels")
    known = set(universe)
    tp: dict[str, int] = {lab: 0 for lab in universe}
    fp: dict[str, int] = {lab: 0 for lab in universe}
    fn: dict[str, int] = {lab: 0 for lab in universe}
    tn: dict[str, int] = {lab: 0 for lab in universe}
    for mid in reference.labels:
        ref = project(reference.labels[mid], level, t)
        pred = project(predicted.labels[mid], level, t)
        stray = (ref | pred) - known
        if stray:
            raise ValidationError(
                f"message {mid!r}: labels outside the universe: {sorted(stray)}"
            )
        for lab in universe:
            in_ref = lab in ref
            in_pred = lab in pred
            if in_ref and in_pred:
                tp[lab] += 1
            elif in_pred:
                fp[lab] += 1
            elif in_ref:
                fn[lab] += 1
            else:
                tn[lab] += 1
    return [
        ConfusionCounts(label_id=lab, tp=tp[lab], fp=fp[lab], fn=fn[lab], tn=tn[lab])
        for lab in universe
    ]


def micro_totals(counts: Sequence[ConfusionCounts]) -> ConfusionCounts:
    """Sum the per-label grids into one micro-aggregated grid."""
    return ConfusionCounts(
        label_id="__micro__",
        tp=sum(c.tp for c in counts),
        fp=sum(c.fp for c in counts),
        fn=sum(c.fn for c in counts),
        tn=sum(c.tn for c in counts),
    )


@dataclass(frozen=True)
class MetricsRow:
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    npv: float | None
    accuracy: float | None
    f1: float | None

    def to_dict(self) -> dict:
        return {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "ppv": self.ppv,
            "npv": self.npv,
            "accuracy": self.accuracy,
            "f1": self.f1,
        }


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(counts: ConfusionCounts) -> MetricsRow:
    """Standard derived metrics; zero denominators yield None, never 0."""
    if min(counts.tp, counts.fp, counts.fn, counts.tn) < 0:
        raise ValidationError("confusion counts must be non-negative")
    sens = _ratio(counts.tp, counts.tp + counts.fn)
    spec = _ratio(counts.tn, counts.tn + counts.fp)
    ppv = _ratio(counts.tp, counts.tp + counts.fp)
    npv = _ratio(counts.tn, counts.tn + counts.fn)
    acc = _ratio(counts.tp + counts.tn, counts.total)
    if ppv is None or sens is None or (ppv + sens) == 0:
        f1 = None
    else:
        f1 = 2 * ppv * sens / (ppv + sens)
    return MetricsRow(sensitivity=sens, specificity=spec, ppv=ppv, npv=npv,
                      accuracy=acc, f1=f1)


def macro_metrics(counts: Sequence[ConfusionCounts]) -> MetricsRow:
    """Unweighted mean of per-label metrics, skipping undefined cells.

    Micro-aggregation (summed counts through `metrics`) is the default
    reporting convention; macro rows are always labeled as such.
    """
    if not counts:
        raise ValidationError("macro_metrics requires at least one label")
    rows = [metrics(c) for c in counts]

    def mean(values: list[float | None]) -> float | None:
        defined = [v for v in values if v is not None]
        return sum(defined) / len(defined) if defined else None

    return MetricsRow(
        sensitivity=mean([r.sensitivity for r in rows]),
        specificity=mean([r.specificity for r in rows]),
        ppv=mean([r.ppv for r in rows]),
        npv=mean([r.npv for r in rows]),
        accuracy=mean([r.accuracy for r in rows]),
        f1=mean([r.f1 for r in rows]),
    )


# --- Kendall's tau ---------------------------------------------------------


def kendall_tau(ranking_a: Sequence[float], ranking_b: Sequence[float]) -> float:
    """Kendall's tau-b (tie-corrected); reduces to tau-a on tie-free input.

    Symmetric in its arguments. Raises if the lists differ in length, are
    shorter than 2, or one list is entirely tied (denominator zero).
    """
    x = np.asarray(ranking_a, dtype="<f8")
    y = np.asarray(ranking_b, dtype="<f8")
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValidationError("rankings must be equal-length 1-d sequences")
    n = x.shape[0]
    if n < 2:
        raise ValidationError("kendall_tau needs at least 2 items")
    iu = np.triu_indices(n, k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    prod = dx * dy
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))
    ties_x = int(np.sum(dx == 0))
    ties_y = int(np.sum(dy == 0))
    n_pairs = n * (n - 1) // 2
    denom_sq = (n_pairs - ties_x) * (n_pairs - ties_y)
    if denom_sq == 0:
        raise ValidationError("kendall_tau undefined: one ranking is entirely tied")
    return (concordant - discordant) / math.sqrt(denom_sq)

from __future__ import annotations

import pytest

from raec.errors import ValidationError
from raec.judge import ErrorAssignment, GuardrailVerdict, Provenance, Stage1Finding
from raec.reporting import (
    relative_frequencies,
    render_error_summary,
    render_frequency_table,
    render_metrics_table,
    render_utilization_report,
    stratify_by_utilization,
    summarize,
    top_frequencies,
)
from raec.evalstats import ConfusionCounts

from helpers import make_triplet


def verdict(message_id: str, codes: list[str]) -> GuardrailVerdict:
    return GuardrailVerdict(
        stage1=Stage1Finding(has_error=bool(codes), summary="s" if codes else "", reasoning="r"),
        assignments=tuple(ErrorAssignment(c, 0.9, "j") for c in codes),
        provenance=Provenance(
            mode="baseline",
            model_id="scripted",
            taxonomy_version=1,
            retrieved_ids=(),
            prompt_digests={},
            template_versions={},
            timings_ms={},
            message_id=message_id,
        ),
    )


def test_summarize_no_errors(tiny_tax):
    summary = summarize([verdict("m1", []), verdict("m2", [])], tiny_tax)
    assert summary.cases_with_error == 0
    assert summary.error_rate == 0.0
    assert summary.total_errors == 0


def test_summarize_counts_message_once_per_domain(tiny_tax):
    # m1 carries codes in both domains; m2 clean
    verdicts = [verdict("m1", ["c1", "c3"]), verdict("m2", [])]
    summary = summarize(verdicts, tiny_tax)
    assert summary.cases_with_error == 1
    assert summary.domain_counts == {"d1": 1, "d2": 1}
    assert sum(summary.domain_counts.values()) == 2
    assert summary.total_errors == 2


def test_summarize_rate(tiny_tax):
    verdicts = [verdict(f"m{i}", ["c1"] if i < 43 else []) for i in range(100)]
    summary = summarize(verdicts, tiny_tax)
    assert summary.error_rate == pytest.approx(0.43)


def test_summarize_order_invariant(tiny_tax):
    verdicts = [verdict("m1", ["c1"]), verdict("m2", ["c2", "c3"]), verdict("m3", [])]
    a = summarize(verdicts, tiny_tax)
    b = summarize(list(reversed(verdicts)), tiny_tax)
    assert a == b


def test_relative_frequencies():
    verdicts = [verdict("m1", ["x"] )] * 4 + [verdict("m2", ["y"])] * 6
    freqs = relative_frequencies(verdicts)
    assert freqs["x"] == pytest.approx(0.4)
    assert freqs["y"] == pytest.approx(0.6)
    assert sum(freqs.values()) == pytest.approx(1.0, abs=1e-9)


def test_relative_frequencies_single_and_empty(tiny_tax):
    assert relative_frequencies([verdict("m", ["c1"])]) == {"c1": 1.0}
    with pytest.raises(ValidationError):
        relative_frequencies([verdict("m", [])])


def test_top_frequencies_sorted():
    freqs = {"a": 0.2, "b": 0.5, "c": 0.2, "d": 0.1}
    top = top_frequencies(freqs, 3)
    assert top == [("b", 0.5), ("a", 0.2), ("c", 0.2)]


def _utilization_fixture():
    verdicts, triplets = [], []
    # utilized group: 10 messages, code X on 2 of them
    for i in range(10):
        codes = ["code-x"] if i < 2 else []
        verdicts.append(verdict(f"u{i}", codes))
        triplets.append(make_triplet(i, thread_id=f"u{i}", draft_utilized=True))
    # discarded group: 100 messages, code X on 28
    for i in range(100):
        codes = ["code-x"] if i < 28 else []
        verdicts.append(verdict(f"d{i}", codes))
        triplets.append(make_triplet(100 + i, thread_id=f"d{i}", draft_utilized=False))
    return verdicts, triplets


def test_stratify_per_message_delta_by_hand():
    verdicts, triplets = _utilization_fixture()
    report = stratify_by_utilization(verdicts, triplets)
    delta = {d.code_id: d for d in report.deltas}["code-x"]
    assert delta.freq_utilized == pytest.approx(20.0)
    assert delta.freq_discarded == pytest.approx(28.0)
    assert delta.delta_pp == pytest.approx(-8.0)
    assert delta.delta_pp == pytest.approx(delta.freq_utilized - delta.freq_discarded, abs=1e-9)


def test_stratify_rates():
    verdicts, triplets = _utilization_fixture()
    report = stratify_by_utilization(verdicts, triplets)
    assert report.utilized.errors_per_draft == pytest.approx(2 / 10)
    assert report.discarded.errors_per_draft == pytest.approx(28 / 100)


def test_stratify_antisymmetric_under_group_swap():
    verdicts, triplets = _utilization_fixture()
    flipped = [
        make_triplet(i, thread_id=t.thread_id, draft_utilized=not t.draft_utilized)
        for i, t in enumerate(triplets)
    ]
    fwd = stratify_by_utilization(verdicts, triplets)
    rev = stratify_by_utilization(verdicts, flipped)
    fwd_deltas = {d.code_id: d.delta_pp for d in fwd.deltas}
    rev_deltas = {d.code_id: d.delta_pp for d in rev.deltas}
    for code in fwd_deltas:
        assert fwd_deltas[code] == pytest.approx(-rev_deltas[code], abs=1e-9)


def test_stratify_missing_flags_fail_loudly():
    verdicts, triplets = _utilization_fixture()
    triplets[3] = make_triplet(3, thread_id="u3", draft_utilized=None)
    with pytest.raises(ValidationError, match="u3"):
        stratify_by_utilization(verdicts, triplets)


def test_stratify_empty_group_rejected():
    verdicts = [verdict("m1", []), verdict("m2", ["x"])]
    triplets = [
        make_triplet(0, thread_id="m1", draft_utilized=True),
        make_triplet(1, thread_id="m2", draft_utilized=True),
    ]
    with pytest.raises(ValidationError, match="discarded"):
        stratify_by_utilization(verdicts, triplets)


def test_stratify_per_instance_denominator():
    verdicts, triplets = _utilization_fixture()
    report = stratify_by_utilization(verdicts, triplets, per_message_denominator=False)
    assert report.denominator == "per-error-instance"
    # all instances are code-x, so both groups sit at 100%
    delta = report.deltas[0]
    assert delta.freq_utilized == pytest.approx(100.0)
    assert delta.freq_discarded == pytest.approx(100.0)


def test_renderers_produce_aligned_text(tiny_tax):
    verdicts = [verdict("m1", ["c1", "c3"]), verdict("m2", [])]
    summary_text = render_error_summary(summarize(verdicts, tiny_tax), tiny_tax)
    assert "Cases with >= 1 error" in summary_text
    assert "Domain One" in summary_text

    table = render_metrics_table([("baseline", ConfusionCounts("d", 42, 48, 31, 379))])
    assert "0.575" in table and "0.515" in table

    undefined = render_metrics_table([("x", ConfusionCounts("d", 0, 0, 0, 10))])
    assert "n/a" in undefined

    freq_text = render_frequency_table(relative_frequencies(verdicts))
    assert "c1" in freq_text and "50.0%" in freq_text

    u_verdicts, u_triplets = _utilization_fixture()
    text = render_utilization_report(stratify_by_utilization(u_verdicts, u_triplets))
    assert "Errors/draft" in text and "code-x" in text

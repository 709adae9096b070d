from __future__ import annotations

import json
from collections import Counter
from datetime import datetime

import numpy as np
import pytest

from raec.corpus import (
    balanced_sample,
    dedupe,
    ingest,
    largest_remainder_allocation,
    load_triplets,
    stratified_sample,
    write_triplets,
)
from raec.errors import ValidationError

from helpers import make_triplet, raw_record


def test_ingest_accepts_clean_records():
    triplets, report = ingest([raw_record(i) for i in range(5)])
    assert len(triplets) == 5
    assert report.accepted_count == 5
    assert report.rejected_count == 0


def test_ingest_rejects_missing_clinician_reply():
    _, report = ingest([raw_record(0, clinician_reply="")])
    assert report.rejection_reasons == Counter({"missing field: clinician_reply": 1})


def test_ingest_rejects_system_records():
    _, report = ingest([raw_record(0, record_type="system_event")])
    assert report.rejection_reasons == Counter({"system/administrative": 1})


def test_ingest_mixed_fixture_counts():
    # 10 valid + 3 invalid: two missing fields, one system event
    records = [raw_record(i) for i in range(10)]
    records.append(raw_record(10, patient_message=""))
    records.append(raw_record(11, llm_draft=None))
    records.append(raw_record(12, record_type="administrative"))
    triplets, report = ingest(records)
    assert len(triplets) == 10
    assert report.accepted_count == 10
    assert report.rejected_count == 3
    assert report.rejection_reasons == Counter(
        {
            "missing field: patient_message": 1,
            "missing field: llm_draft": 1,
            "system/administrative": 1,
        }
    )


def test_ingest_parses_json_lines_and_rejects_malformed():
    lines = [json.dumps(raw_record(0)), "{not json", json.dumps(raw_record(1))]
    triplets, report = ingest(lines)
    assert len(triplets) == 2
    assert report.rejection_reasons == Counter({"malformed record": 1})
    assert report.accepted_count + report.rejected_count == 3


def test_ingest_rejects_bad_timestamp():
    _, report = ingest([raw_record(0, date_sent="not-a-date")])
    assert report.rejection_reasons == Counter({"invalid date_sent": 1})


def test_dedupe_identical_text_and_timestamp():
    a = make_triplet(0)
    b = make_triplet(1, patient_message=a.patient_message, date_sent=a.date_sent)
    out = dedupe([a, b])
    assert out == [a]


def test_dedupe_same_text_different_timestamp_keeps_both():
    a = make_triplet(0)
    b = make_triplet(1, patient_message=a.patient_message)
    assert len(dedupe([a, b])) == 2


def test_dedupe_first_in_stream_survives():
    base = make_triplet(0)
    dupes = [
        make_triplet(i, patient_message=base.patient_message, date_sent=base.date_sent)
        for i in (3, 7)
    ]
    stream = [base, make_triplet(1), dupes[0], make_triplet(2), dupes[1]]
    out = dedupe(stream)
    # oracle: first occurrence per (text, timestamp) key in stable order
    seen, expected = set(), []
    for t in stream:
        key = (t.patient_message, t.date_sent)
        if key not in seen:
            seen.add(key)
            expected.append(t)
    assert out == expected
    assert out[0].thread_id == "t0000"


def test_dedupe_is_idempotent():
    stream = [make_triplet(i % 3, date_sent=datetime(2025, 1, 1)) for i in range(9)]
    once = dedupe(stream)
    assert dedupe(once) == once


def test_largest_remainder_by_hand():
    assert largest_remainder_allocation({"A": 600, "B": 300, "C": 100}, 10) == {
        "A": 6,
        "B": 3,
        "C": 1,
    }


def test_largest_remainder_sums_and_bounds():
    rng = np.random.Generator(np.random.PCG64(7))
    for _ in range(200):
        counts = {f"s{i}": int(rng.integers(1, 50)) for i in range(int(rng.integers(2, 8)))}
        total = sum(counts.values())
        n = int(rng.integers(0, total + 1))
        alloc = largest_remainder_allocation(counts, n)
        assert sum(alloc.values()) == n
        for k, c in counts.items():
            assert alloc[k] <= c
            assert abs(alloc[k] - n * c / total) < 1.0


def _population():
    specs = ["Oncology"] * 60 + ["Primary Care"] * 30 + ["Geriatrics"] * 10
    return [make_triplet(i, specialty=s) for i, s in enumerate(specs)]


def test_stratified_sample_allocation_and_determinism():
    pop = _population()
    sample1, manifest = stratified_sample(pop, 10, seed=42)
    assert manifest["allocation"] == {"Geriatrics": 1, "Oncology": 6, "Primary Care": 3}
    assert len(sample1) == 10
    sample2, _ = stratified_sample(pop, 10, seed=42)
    assert sample1 == sample2
    sample3, _ = stratified_sample(pop, 10, seed=43)
    assert sample1 != sample3


def test_stratified_sample_full_population():
    pop = _population()
    sample, _ = stratified_sample(pop, len(pop), seed=0)
    assert sorted(t.thread_id for t in sample) == sorted(t.thread_id for t in pop)


def test_stratified_sample_rejects_oversize():
    with pytest.raises(ValidationError):
        stratified_sample(_population(), 101, seed=0)


def test_stratified_does_not_mutate_input():
    pop = _population()
    before = list(pop)
    stratified_sample(pop, 10, seed=1)
    assert pop == before


def test_balanced_sample_even_split():
    scored = [(make_triplet(i), i < 80) for i in range(200)]
    sample, manifest = balanced_sample(scored, 100, seed=3)
    assert manifest["per_class"] == {"error": 50, "no_error": 50}
    assert manifest["shortfall"] == 0
    flags = {t.thread_id: has for t, has in scored}
    assert sum(1 for t in sample if flags[t.thread_id]) == 50


def test_balanced_sample_shortfall_no_backfill():
    scored = [(make_triplet(i), i < 3) for i in range(203)]
    sample, manifest = balanced_sample(scored, 100, seed=3)
    assert manifest["per_class"] == {"error": 3, "no_error": 50}
    assert manifest["shortfall"] == 47
    assert len(sample) == 53


def test_balanced_sample_zero_and_odd():
    scored = [(make_triplet(i), i % 2 == 0) for i in range(10)]
    sample, _ = balanced_sample(scored, 0, seed=0)
    assert sample == []
    with pytest.raises(ValidationError):
        balanced_sample(scored, 5, seed=0)


def test_triplet_round_trip(tmp_path):
    triplets = [make_triplet(i, draft_utilized=(i % 2 == 0)) for i in range(4)]
    path = tmp_path / "t.jsonl"
    write_triplets(triplets, path)
    assert load_triplets(path) == triplets

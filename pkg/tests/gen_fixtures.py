"""Deterministic generator for the bundled test fixtures.

Regenerate with:  python3 tests/gen_fixtures.py
Outputs (checked in under tests/data/):
  synthetic_corpus.jsonl     raw ingest stream: 500 unique valid messages plus
                             duplicates and rejectable records
  scripted_enhanced.jsonl    ordinal scripted-backend transcript aligned with an
                             enhanced check over the 500 clean triplets
  physician_labels.jsonl     reference annotations over the same message ids
  retrieval_judgments.jsonl  physician adjudications for retrieve-eval
"""

from __future__ import annotations

import json
from datetime import datetime, timedelta
from pathlib import Path

from raec.taxonomy import seed_taxonomy

DATA_DIR = Path(__file__).parent / "data"

N_MESSAGES = 500

SPECIALTIES = ["Primary Care", "Oncology", "Gastroenterology", "Internal Medicine",
               "Sports Medicine"]
DEPARTMENTS = ["North Clinic", "South Clinic", "Downtown Clinic"]
DOCTORS = ["Dr. Adams", "Dr. Baker", "Dr. Chen", "Dr. Davis"]
TOPICS = ["a refill of my blood pressure medication", "pain after my procedure",
          "my recent lab results", "a new rash on my arm", "scheduling a follow-up visit",
          "side effects from the new tablet", "swelling in my left ankle",
          "my blood sugar readings this week", "dizziness in the mornings",
          "the dose change we discussed"]

# Positions (by unique-message ordinal) after which an extra record is emitted.
DUPLICATE_AFTER = {50, 150, 250, 350, 450}
INVALID_AFTER = {
    75: {"record_type": "system_event", "note": "automated appointment reminder"},
    175: "missing_reply",
    275: "missing_reply",
    375: {"record_type": "administrative", "note": "billing event"},
    475: "bad_date",
    495: "malformed",
    499: {"record_type": "system_event", "note": "portal maintenance notice"},
}


def base_record(i: int) -> dict:
    topic = TOPICS[i % len(TOPICS)]
    return {
        "record_type": "message",
        "thread_id": f"syn-{i:04d}",
        "patient_message": (
            f"Hello, I am writing about {topic}. This is message {i} and I would "
            f"like advice on what to do next."
        ),
        "llm_prompt": "Draft a reply to the patient message using the chart context.",
        "llm_draft": (
            f"Thank you for reaching out about {topic}. Based on your chart, "
            f"here is draft guidance number {i}."
        ),
        "clinician_reply": (
            f"Thanks for your message regarding {topic}. Here is what I recommend "
            f"(final reply {i})."
        ),
        "date_sent": (datetime(2025, 1, 2) + timedelta(minutes=7 * i)).isoformat(),
        "recipient_name": DOCTORS[i % len(DOCTORS)],
        "message_sender": "patient",
        "department": DEPARTMENTS[i % len(DEPARTMENTS)],
        "specialty": SPECIALTIES[i % len(SPECIALTIES)],
        "draft_utilized": i % 4 == 0,
    }


def flagged(i: int) -> bool:
    return i % 3 == 0


def verdict_codes(i: int, codes: list[str]) -> list[str]:
    chosen = [codes[i % len(codes)]]
    if i % 6 == 0:
        extra = codes[(i + 3) % len(codes)]
        if extra not in chosen:
            chosen.append(extra)
    return chosen


def physician_codes(i: int, codes: list[str]) -> list[str]:
    if flagged(i):
        assigned = verdict_codes(i, codes)
        if i % 9 == 0:  # disagree on the exact code
            assigned = [codes[(i + 5) % len(codes)]] + assigned[1:]
        return sorted(set(assigned))
    if i % 5 == 0:  # model miss
        return [codes[(i + 1) % len(codes)]]
    return []


def write_corpus(path: Path) -> None:
    lines: list[str] = []
    for i in range(N_MESSAGES):
        rec = base_record(i)
        lines.append(json.dumps(rec, sort_keys=True))
        if i in DUPLICATE_AFTER:
            # identical text/timestamp pair, later sender field: must collapse
            dup = dict(rec)
            dup["message_sender"] = "patient-duplicate"
            lines.append(json.dumps(dup, sort_keys=True))
        if i in INVALID_AFTER:
            spec = INVALID_AFTER[i]
            if spec == "missing_reply":
                bad = base_record(i)
                bad["thread_id"] = f"bad-{i:04d}"
                bad["clinician_reply"] = ""
                lines.append(json.dumps(bad, sort_keys=True))
            elif spec == "bad_date":
                bad = base_record(i)
                bad["thread_id"] = f"bad-{i:04d}"
                bad["date_sent"] = "yesterday afternoon"
                lines.append(json.dumps(bad, sort_keys=True))
            elif spec == "malformed":
                lines.append('{"record_type": "message", "thread_id": "bad-trunc"')
            else:
                bad = base_record(i)
                bad["thread_id"] = f"bad-{i:04d}"
                bad.update(spec)
                lines.append(json.dumps(bad, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_scripted(path: Path, codes: list[str]) -> None:
    lines = []
    for i in range(N_MESSAGES):
        if flagged(i):
            stage1 = {"has_error": True,
                      "summary": f"draft {i} misses a safety-relevant point",
                      "reasoning": f"scripted reasoning for message {i}"}
            lines.append(json.dumps({"response": json.dumps(stage1)}, sort_keys=True))
            errors = [
                {"code": c, "confidence": round(0.55 + 0.04 * (i % 10), 2),
                 "justification": f"scripted justification {i}"}
                for c in verdict_codes(i, codes)
            ]
            lines.append(json.dumps({"response": json.dumps({"errors": errors})},
                                    sort_keys=True))
        else:
            stage1 = {"has_error": False, "summary": "",
                      "reasoning": f"scripted reasoning for message {i}"}
            lines.append(json.dumps({"response": json.dumps(stage1)}, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_physician(path: Path, codes: list[str]) -> None:
    lines = []
    for i in range(N_MESSAGES):
        rec = {"message_id": f"syn-{i:04d}", "source": "physician",
               "codes": physician_codes(i, codes)}
        lines.append(json.dumps(rec, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_judgments(path: Path) -> None:
    rows = [
        ("q01", [True, True, True, True, True], [1, 2, 3, 4, 5]),
        ("q02", [True, True, True, False, False], [2, 1, 3, 4, 5]),
        ("q03", [True, False, True, False, False], [1, 3, 2, 4, 5]),
        ("q04", [False, False, False, False, False], [5, 4, 3, 2, 1]),
        ("q05", [True, True, False, False, False], [1, 2, 3, 5, 4]),
        ("q06", [True, True, True, True, False], [2, 3, 1, 4, 5]),
        ("q07", [True, False, False, False, False], [1, 2, 4, 3, 5]),
        ("q08", [True, True, True, False, True], [1, 2, 3, 4, 5]),
    ]
    lines = [
        json.dumps({"query_id": q, "helpful": h, "physician_ranking": r}, sort_keys=True)
        for q, h, r in rows
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def main() -> None:
    DATA_DIR.mkdir(exist_ok=True)
    codes = [c for c in seed_taxonomy().code_ids() if not c.startswith("unspecified-")]
    write_corpus(DATA_DIR / "synthetic_corpus.jsonl")
    write_scripted(DATA_DIR / "scripted_enhanced.jsonl", codes)
    write_physician(DATA_DIR / "physician_labels.jsonl", codes)
    write_judgments(DATA_DIR / "retrieval_judgments.jsonl")
    print(f"fixtures written to {DATA_DIR}")


if __name__ == "__main__":
    main()

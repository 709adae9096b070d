"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json
from datetime import datetime, timedelta

from raec.corpus import MessageTriplet


def make_triplet(i: int = 0, **overrides) -> MessageTriplet:
    fields = dict(
        thread_id=f"t{i:04d}",
        patient_message=f"patient message number {i}",
        llm_prompt="draft a reply",
        llm_draft=f"draft reply {i}",
        clinician_reply=f"final reply {i}",
        date_sent=datetime(2025, 1, 1) + timedelta(minutes=i),
        recipient_name="Dr. Example",
        message_sender="patient",
        department="Medicine",
        specialty="Primary Care",
        draft_utilized=None,
    )
    fields.update(overrides)
    return MessageTriplet(**fields)


def raw_record(i: int = 0, **overrides) -> dict:
    rec = {
        "record_type": "message",
        "thread_id": f"t{i:04d}",
        "patient_message": f"patient message number {i}",
        "llm_prompt": "draft a reply",
        "llm_draft": f"draft reply {i}",
        "clinician_reply": f"final reply {i}",
        "date_sent": (datetime(2025, 1, 1) + timedelta(minutes=i)).isoformat(),
        "recipient_name": "Dr. Example",
        "message_sender": "patient",
        "department": "Medicine",
        "specialty": "Primary Care",
    }
    rec.update(overrides)
    return rec


def stage1_json(has_error: bool, summary: str = "", reasoning: str = "r") -> str:
    return json.dumps({"has_error": has_error, "summary": summary, "reasoning": reasoning})


def stage2_json(*codes_conf: tuple[str, float]) -> str:
    return json.dumps(
        {"errors": [{"code": c, "confidence": conf, "justification": "j"} for c, conf in codes_conf]}
    )

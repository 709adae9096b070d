from __future__ import annotations

import json

import pytest

from raec.errors import ValidationError
from raec.induction import (
    CodeProposal,
    ReviewDecision,
    induct,
    load_decisions,
    load_proposals,
    merge_review,
    write_proposals,
)
from raec.llm import ScriptedBackend
from raec.taxonomy import load_taxonomy, taxonomy_to_dict

from helpers import make_triplet


def induct_json(errors=(), proposals=()) -> str:
    return json.dumps({"errors": list(errors), "proposals": list(proposals)})


def test_induct_labels_without_proposals(tiny_tax):
    backend = ScriptedBackend(in_order=[induct_json(["c1"]), induct_json()])
    result = induct([make_triplet(0), make_triplet(1)], tiny_tax, backend)
    assert result.proposals == []
    assert result.labels == {"t0000": frozenset({"c1"}), "t0001": frozenset()}
    assert result.failures == {}


def test_induct_dedupes_proposals_case_insensitively(tiny_tax):
    proposal = {"name": "Workflow Violation", "definition": "breaks a local workflow",
                "parent_subdomain": "s1"}
    responses = [
        induct_json([], [proposal]),
        induct_json([], [dict(proposal, name="workflow violation")]),
        induct_json([], [dict(proposal, name="WORKFLOW VIOLATION")]),
    ]
    backend = ScriptedBackend(in_order=responses)
    result = induct([make_triplet(i) for i in range(3)], tiny_tax, backend)
    assert len(result.proposals) == 1
    p = result.proposals[0]
    assert p.proposed_name == "Workflow Violation"  # first occurrence retained
    assert p.occurrence_count == 3
    assert p.triggering_message_id == "t0000"


def test_induct_records_failures_and_continues(tiny_tax):
    backend = ScriptedBackend(
        in_order=[induct_json(["c1"]), "garbage", "more garbage", induct_json(["c2"])]
    )
    result = induct([make_triplet(i) for i in range(3)], tiny_tax, backend)
    assert set(result.labels) == {"t0000", "t0002"}
    assert list(result.failures) == ["t0001"]


def test_induct_unknown_code_is_retried_then_recorded(tiny_tax):
    backend = ScriptedBackend(in_order=[induct_json(["bogus"]), induct_json(["c1"])])
    result = induct([make_triplet(0)], tiny_tax, backend)
    assert result.labels == {"t0000": frozenset({"c1"})}
    assert backend.call_count == 2


def test_induct_never_mutates_taxonomy(tiny_tax):
    before = taxonomy_to_dict(tiny_tax)
    backend = ScriptedBackend(
        in_order=[induct_json([], [{"name": "New Thing", "definition": "d",
                                    "parent_subdomain": "s1"}])]
    )
    induct([make_triplet(0)], tiny_tax, backend)
    assert taxonomy_to_dict(tiny_tax) == before


def _proposal(name="Workflow Violation", parent="s1") -> CodeProposal:
    return CodeProposal(
        proposed_name=name,
        proposed_definition="breaks a documented local workflow",
        triggering_message_id="t0000",
        suggested_parent_subdomain=parent,
    )


def test_merge_review_all_reject_bumps_version_only(tiny_tax):
    decisions = [ReviewDecision("Workflow Violation", "reject")]
    new_t = merge_review(tiny_tax, [_proposal()], decisions)
    assert new_t.version == tiny_tax.version + 1
    old = taxonomy_to_dict(tiny_tax)
    new = taxonomy_to_dict(new_t)
    old.pop("version"), new.pop("version")
    assert old == new


def test_merge_review_accept_adds_code(tiny_tax):
    new_t = merge_review(tiny_tax, [_proposal()], [ReviewDecision("workflow violation", "accept")])
    assert len(new_t.codes) == len(tiny_tax.codes) + 1
    assert new_t.has_code("workflow-violation")
    assert new_t.parent_subdomain("workflow-violation") == "s1"
    # output still passes load validation
    load_taxonomy(taxonomy_to_dict(new_t))


def test_merge_review_rename(tiny_tax):
    decisions = [ReviewDecision("Workflow Violation", "rename", new_name="Local Process Breach")]
    new_t = merge_review(tiny_tax, [_proposal()], decisions)
    assert new_t.has_code("local-process-breach")
    assert not new_t.has_code("workflow-violation")


def test_merge_review_merge_and_errors(tiny_tax):
    ok = merge_review(tiny_tax, [_proposal()],
                      [ReviewDecision("Workflow Violation", "merge", merge_into="c1")])
    assert len(ok.codes) == len(tiny_tax.codes)
    with pytest.raises(ValidationError, match="unknown code"):
        merge_review(tiny_tax, [_proposal()],
                     [ReviewDecision("Workflow Violation", "merge", merge_into="zzz")])
    with pytest.raises(ValidationError, match="parent subdomain"):
        merge_review(tiny_tax, [_proposal(parent=None)],
                     [ReviewDecision("Workflow Violation", "accept")])
    with pytest.raises(ValidationError, match="unknown proposal"):
        merge_review(tiny_tax, [], [ReviewDecision("Nope", "reject")])


def test_merge_review_version_monotonicity_chain(tiny_tax):
    t = tiny_tax
    for i in range(3):
        t2 = merge_review(t, [_proposal(name=f"Proposal {i}")],
                          [ReviewDecision(f"Proposal {i}", "accept")])
        assert t2.version > t.version
        t = t2
    assert len(t.codes) == len(tiny_tax.codes) + 3


def test_proposal_and_decision_round_trip(tmp_path):
    path = tmp_path / "p.jsonl"
    write_proposals([_proposal()], path)
    assert load_proposals(path) == [_proposal()]
    dpath = tmp_path / "d.jsonl"
    dpath.write_text(json.dumps({"proposal_name": "Workflow Violation", "action": "accept"}) + "\n")
    assert load_decisions(dpath)[0].action == "accept"
    with pytest.raises(ValidationError):
        ReviewDecision("x", "rename")
    with pytest.raises(ValidationError):
        ReviewDecision("x", "merge")

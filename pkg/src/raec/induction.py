"""Looped taxonomy refinement: label with the current taxonomy, collect
model-proposed codes, and stage them for human review.

Proposals are never auto-accepted; `merge_review` applies explicit reviewer
decisions and produces a new taxonomy version that always passes full
validation. Per-message backend failures are recorded and the loop
continues, so one bad response cannot abort a long run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

from .corpus import MessageTriplet
from .errors import ParseError, TaxonomyError, ValidationError
from .evalstats import AnnotationSet
from .llm import LLMBackend, prompt_digest
from .prompting import extract_json, load_template, taxonomy_block
from .taxonomy import Taxonomy, slugify, taxonomy_from_dict, taxonomy_to_dict

INDUCT_TEMPLATE = "induct_v1"
REFORMAT_TEMPLATE = "reformat_v1"

INDUCT_SCHEMA = (
    '{"errors": ["code-id", ...], "proposals": '
    '[{"name": "string", "definition": "string", "parent_subdomain": "string"}]}'
)

ACTION_ACCEPT = "accept"
ACTION_RENAME = "rename"
ACTION_MERGE = "merge"
ACTION_REJECT = "reject"
ACTIONS = (ACTION_ACCEPT, ACTION_RENAME, ACTION_MERGE, ACTION_REJECT)


@dataclass(frozen=True)
class CodeProposal:
    proposed_name: str
    proposed_definition: str
    triggering_message_id: str
    suggested_parent_subdomain: str | None = None
    occurrence_count: int = 1

    def to_record(self) -> dict:
        return {
            "proposed_name": self.proposed_name,
            "proposed_definition": self.proposed_definition,
            "triggering_message_id": self.triggering_message_id,
            "suggested_parent_subdomain": self.suggested_parent_subdomain,
            "occurrence_count": self.occurrence_count,
        }


@dataclass(frozen=True)
class ReviewDecision:
    proposal_name: str
    action: str
    new_name: str | None = None  # rename
    merge_into: str | None = None  # merge target code_id
    parent_subdomain: str | None = None  # overrides the proposal's suggestion
    definition: str | None = None  # overrides the proposal's definition
    note: str = ""

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise ValidationError(f"action must be one of {ACTIONS}, got {self.action!r}")
        if self.action == ACTION_RENAME and not (self.new_name and self.new_name.strip()):
            raise ValidationError(f"rename of {self.proposal_name!r} needs new_name")
        if self.action == ACTION_MERGE and not self.merge_into:
            raise ValidationError(f"merge of {self.proposal_name!r} needs merge_into")


@dataclass
class InductionResult:
    labels: dict[str, frozenset[str]]  # message id -> taxonomy code ids
    proposals: list[CodeProposal]
    failures: dict[str, str]  # message id -> error description

    def annotation_set(self, source: str = "induction") -> AnnotationSet:
        return AnnotationSet(source=source, labels=dict(self.labels))


def _parse_induct(text: str, t: Taxonomy) -> tuple[list[str], list[dict]]:
    obj = extract_json(text)
    errors = obj.get("errors", [])
    proposals = obj.get("proposals", [])
    if not isinstance(errors, list) or not all(isinstance(e, str) for e in errors):
        raise ParseError("induction output: 'errors' must be a list of code ids")
    if not isinstance(proposals, list):
        raise ParseError("induction output: 'proposals' must be a list")
    for i, p in enumerate(proposals):
        if not isinstance(p, dict) or not str(p.get("name", "")).strip():
            raise ParseError(f"induction output: proposals[{i}] needs a name")
    unknown = sorted({e for e in errors if not t.has_code(e)})
    if unknown:
        raise ParseError(f"induction output: unknown codes {unknown}")
    return errors, proposals


def induct(
    triplets: Sequence[MessageTriplet], t: Taxonomy, backend: LLMBackend
) -> InductionResult:
    """Label every triplet with the current taxonomy and collect proposals.

    Proposals are deduplicated by case-insensitive name, keeping the first
    occurrence and counting repeats. The input taxonomy is never mutated.
    """
    ids = [tr.thread_id for tr in triplets]
    if len(set(ids)) != len(ids):
        raise ValidationError("triplets must carry unique thread ids for induction")
    template = load_template(INDUCT_TEMPLATE)
    tax_block = taxonomy_block(t)
    labels: dict[str, frozenset[str]] = {}
    failures: dict[str, str] = {}
    proposals: list[CodeProposal] = []
    by_name: dict[str, int] = {}  # lowercase name -> position in proposals

    for tr in triplets:
        parts = template.render(
            {
                "taxonomy_block": tax_block,
                "patient_message": tr.patient_message,
                "llm_draft": tr.llm_draft,
                "clinician_reply": tr.clinician_reply,
            }
        )
        try:
            response = backend.generate(parts)
            try:
                errors, raw_proposals = _parse_induct(response, t)
            except ParseError:
                retry = list(parts) + [("assistant", response)] + load_template(
                    REFORMAT_TEMPLATE
                ).render({"previous_response": response, "schema": INDUCT_SCHEMA})
                errors, raw_proposals = _parse_induct(backend.generate(retry), t)
        except Exception as exc:  # noqa: BLE001 - per-message failures must not end the run
            failures[tr.thread_id] = f"{type(exc).__name__}: {exc}"
            continue
        labels[tr.thread_id] = frozenset(errors)
        for raw in raw_proposals:
            name = str(raw["name"]).strip()
            key = name.lower()
            if key in by_name:
                i = by_name[key]
                proposals[i] = CodeProposal(
                    proposed_name=proposals[i].proposed_name,
                    proposed_definition=proposals[i].proposed_definition,
                    triggering_message_id=proposals[i].triggering_message_id,
                    suggested_parent_subdomain=proposals[i].suggested_parent_subdomain,
                    occurrence_count=proposals[i].occurrence_count + 1,
                )
            else:
                by_name[key] = len(proposals)
                parent = str(raw.get("parent_subdomain", "") or "").strip() or None
                proposals.append(
                    CodeProposal(
                        proposed_name=name,
                        proposed_definition=str(raw.get("definition", "") or "").strip(),
                        triggering_message_id=tr.thread_id,
                        suggested_parent_subdomain=parent,
                    )
                )
    return InductionResult(labels=labels, proposals=proposals, failures=failures)


def merge_review(
    t: Taxonomy, proposals: Sequence[CodeProposal], decisions: Sequence[ReviewDecision]
) -> Taxonomy:
    """Apply reviewer decisions to staged proposals; returns a new version.

    Accepted (or renamed) proposals become codes under their subdomain;
    merges and rejects add nothing. The input taxonomy is untouched and the
    output re-validates against the full document rules.
    """
    by_name = {p.proposed_name.lower(): p for p in proposals}
    doc = taxonomy_to_dict(t)
    doc["version"] = t.version + 1
    for d in decisions:
        proposal = by_name.get(d.proposal_name.lower())
        if proposal is None:
            raise ValidationError(f"decision references unknown proposal {d.proposal_name!r}")
        if d.action == ACTION_REJECT:
            continue
        if d.action == ACTION_MERGE:
            if not t.has_code(d.merge_into):
                raise ValidationError(
                    f"cannot merge {d.proposal_name!r} into unknown code {d.merge_into!r}"
                )
            continue
        name = d.new_name.strip() if d.action == ACTION_RENAME else proposal.proposed_name
        parent = d.parent_subdomain or proposal.suggested_parent_subdomain
        if not parent:
            raise ValidationError(f"accepting {d.proposal_name!r} requires a parent subdomain")
        if parent not in {s.subdomain_id for s in t.subdomains}:
            raise ValidationError(
                f"accepting {d.proposal_name!r}: unknown subdomain {parent!r}"
            )
        definition = (d.definition or proposal.proposed_definition).strip()
        if not definition:
            raise ValidationError(
                f"accepting {d.proposal_name!r} requires a non-empty definition"
            )
        code_id = slugify(name)
        if any(c["id"] == code_id for c in doc["codes"]):
            raise TaxonomyError(f"duplicate code id: {code_id!r}")
        doc["codes"].append(
            {"id": code_id, "name": name, "definition": definition, "parent": parent}
        )
    return taxonomy_from_dict(doc)


# --- serialization -----------------------------------------------------------


def write_proposals(proposals: Sequence[CodeProposal], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in proposals:
            fh.write(json.dumps(p.to_record(), sort_keys=True) + "\n")


def load_proposals(path: Union[str, Path]) -> list[CodeProposal]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(
                    CodeProposal(
                        proposed_name=rec["proposed_name"],
                        proposed_definition=rec.get("proposed_definition", ""),
                        triggering_message_id=rec["triggering_message_id"],
                        suggested_parent_subdomain=rec.get("suggested_parent_subdomain"),
                        occurrence_count=int(rec.get("occurrence_count", 1)),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad proposal record: {exc}") from exc
    return out


def load_decisions(path: Union[str, Path]) -> list[ReviewDecision]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(
                    ReviewDecision(
                        proposal_name=rec["proposal_name"],
                        action=rec["action"],
                        new_name=rec.get("new_name"),
                        merge_into=rec.get("merge_into"),
                        parent_subdomain=rec.get("parent_subdomain"),
                        definition=rec.get("definition"),
                        note=rec.get("note", ""),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad decision record: {exc}") from exc
    return out

"""Hierarchical clinical error ontology: load, validate, query, project.

A taxonomy is a strict three-level tree (domain -> subdomain -> error code)
loaded from a JSON document. Instances are immutable after load; new
versions are new values.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Union

from .errors import TaxonomyError, UnknownCodeError

LEVEL_CODE = "code"
LEVEL_SUBDOMAIN = "subdomain"
LEVEL_DOMAIN = "domain"
LEVELS = (LEVEL_CODE, LEVEL_SUBDOMAIN, LEVEL_DOMAIN)

_SLUG_RE = re.compile(r"[^a-z0-9]+")


def slugify(name: str) -> str:
    """Derive a stable id slug from a display name (lowercase, hyphenated)."""
    slug = _SLUG_RE.sub("-", name.strip().lower()).strip("-")
    if not slug:
        raise TaxonomyError(f"cannot derive a slug from name {name!r}")
    return slug


@dataclass(frozen=True)
class Domain:
    domain_id: str
    name: str
    definition: str = ""


@dataclass(frozen=True)
class Subdomain:
    subdomain_id: str
    name: str
    domain_id: str
    definition: str = ""


@dataclass(frozen=True)
class ErrorCode:
    code_id: str
    name: str
    definition: str
    subdomain_id: str
    exemplar_snippets: tuple[str, ...] = ()


@dataclass(frozen=True)
class Taxonomy:
    """Validated, immutable three-level error ontology."""

    version: int
    domains: tuple[Domain, ...]
    subdomains: tuple[Subdomain, ...]
    codes: tuple[ErrorCode, ...]
    _domain_by_id: dict = field(repr=False, compare=False, default_factory=dict)
    _subdomain_by_id: dict = field(repr=False, compare=False, default_factory=dict)
    _code_by_id: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_domain_by_id", {d.domain_id: d for d in self.domains})
        object.__setattr__(self, "_subdomain_by_id", {s.subdomain_id: s for s in self.subdomains})
        object.__setattr__(self, "_code_by_id", {c.code_id: c for c in self.codes})

    def domain(self, domain_id: str) -> Domain:
        return self._domain_by_id[domain_id]

    def subdomain(self, subdomain_id: str) -> Subdomain:
        return self._subdomain_by_id[subdomain_id]

    def code(self, code_id: str) -> ErrorCode:
        if code_id not in self._code_by_id:
            raise UnknownCodeError(f"unknown code id: {code_id!r} (taxonomy v{self.version})")
        return self._code_by_id[code_id]

    def has_code(self, code_id: str) -> bool:
        return code_id in self._code_by_id

    def code_ids(self) -> list[str]:
        return sorted(self._code_by_id)

    def subdomain_ids(self) -> list[str]:
        return sorted(self._subdomain_by_id)

    def domain_ids(self) -> list[str]:
        return sorted(self._domain_by_id)

    def parent_subdomain(self, code_id: str) -> str:
        return self.code(code_id).subdomain_id

    def parent_domain(self, code_id: str) -> str:
        return self.subdomain(self.code(code_id).subdomain_id).domain_id


def _require_nonempty(value: object, what: str, entry_id: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise TaxonomyError(f"empty {what} for id {entry_id!r}")
    return value


def taxonomy_from_dict(doc: Mapping) -> Taxonomy:
    """Validate a parsed taxonomy document and build a Taxonomy.

    Raises TaxonomyError naming the offending id on duplicate ids, dangling
    parent references, or empty names/definitions.
    """
    if not isinstance(doc, Mapping):
        raise TaxonomyError("taxonomy document must be a JSON object")
    version = doc.get("version")
    if not isinstance(version, int) or isinstance(version, bool) or version < 0:
        raise TaxonomyError(f"version must be a non-negative integer, got {version!r}")

    domains: list[Domain] = []
    seen: set[str] = set()
    for entry in doc.get("domains", []):
        did = entry.get("id")
        if not did:
            raise TaxonomyError("domain entry missing id")
        if did in seen:
            raise TaxonomyError(f"duplicate domain id: {did!r}")
        seen.add(did)
        domains.append(
            Domain(
                domain_id=did,
                name=_require_nonempty(entry.get("name"), "name", did),
                definition=entry.get("definition", "") or "",
            )
        )

    subdomains: list[Subdomain] = []
    seen = set()
    domain_ids = {d.domain_id for d in domains}
    for entry in doc.get("subdomains", []):
        sid = entry.get("id")
        if not sid:
            raise TaxonomyError("subdomain entry missing id")
        if sid in seen:
            raise TaxonomyError(f"duplicate subdomain id: {sid!r}")
        seen.add(sid)
        parent = entry.get("parent")
        if parent not in domain_ids:
            raise TaxonomyError(f"subdomain {sid!r} references unknown domain {parent!r}")
        subdomains.append(
            Subdomain(
                subdomain_id=sid,
                name=_require_nonempty(entry.get("name"), "name", sid),
                domain_id=parent,
                definition=entry.get("definition", "") or "",
            )
        )

    codes: list[ErrorCode] = []
    seen = set()
    subdomain_ids = {s.subdomain_id for s in subdomains}
    for entry in doc.get("codes", []):
        cid = entry.get("id")
        if not cid:
            raise TaxonomyError("code entry missing id")
        if cid in seen:
            raise TaxonomyError(f"duplicate code id: {cid!r}")
        seen.add(cid)
        parent = entry.get("parent")
        if parent not in subdomain_ids:
            raise TaxonomyError(f"code {cid!r} references unknown subdomain {parent!r}")
        codes.append(
            ErrorCode(
                code_id=cid,
                name=_require_nonempty(entry.get("name"), "name", cid),
                definition=_require_nonempty(entry.get("definition"), "definition", cid),
                subdomain_id=parent,
                exemplar_snippets=tuple(entry.get("exemplars", []) or ()),
            )
        )

    taxonomy = Taxonomy(
        version=version,
        domains=tuple(domains),
        subdomains=tuple(subdomains),
        codes=tuple(codes),
    )

    # A validated release has no empty domains: every domain must be
    # reachable from at least one code, and the tree must be non-trivial.
    if not codes:
        raise TaxonomyError("taxonomy contains no error codes")
    populated = {taxonomy.parent_domain(c.code_id) for c in codes}
    for d in domains:
        if d.domain_id not in populated:
            raise TaxonomyError(f"domain {d.domain_id!r} contains no error codes")
    return taxonomy


def load_taxonomy(source: Union[str, Path, Mapping]) -> Taxonomy:
    """Load and validate a taxonomy from a JSON file path or parsed document."""
    if isinstance(source, Mapping):
        return taxonomy_from_dict(source)
    path = Path(source)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"taxonomy file {path} is not valid JSON: {exc}") from exc
    return taxonomy_from_dict(doc)


def taxonomy_to_dict(t: Taxonomy) -> dict:
    """Serialize back to the document schema; round-trips modulo whitespace."""
    def entry(eid: str, name: str, definition: str, parent: str | None = None,
              exemplars: tuple[str, ...] = ()) -> dict:
        out: dict = {"id": eid, "name": name}
        if definition:
            out["definition"] = definition
        if parent is not None:
            out["parent"] = parent
        if exemplars:
            out["exemplars"] = list(exemplars)
        return out

    return {
        "version": t.version,
        "domains": [entry(d.domain_id, d.name, d.definition) for d in t.domains],
        "subdomains": [
            entry(s.subdomain_id, s.name, s.definition, s.domain_id) for s in t.subdomains
        ],
        "codes": [
            entry(c.code_id, c.name, c.definition, c.subdomain_id, c.exemplar_snippets)
            for c in t.codes
        ],
    }


def save_taxonomy(t: Taxonomy, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(taxonomy_to_dict(t), indent=2, sort_keys=False) + "\n", encoding="utf-8"
    )


def seed_taxonomy() -> Taxonomy:
    """The shipped seed taxonomy (placeholder structure, non-canonical)."""
    with resources.files("raec.data").joinpath("seed_taxonomy.json").open("r") as fh:
        return taxonomy_from_dict(json.load(fh))


def project(codes: Iterable[str], level: str, t: Taxonomy) -> set[str]:
    """Project a set of code ids onto a coarser hierarchy level.

    level="code" returns the input unchanged; "subdomain"/"domain" return
    the deduplicated ancestor set. Unknown code ids raise UnknownCodeError.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    code_set = set(codes)
    for cid in code_set:
        t.code(cid)  # existence check
    if level == LEVEL_CODE:
        return code_set
    if level == LEVEL_SUBDOMAIN:
        return {t.parent_subdomain(cid) for cid in code_set}
    return {t.parent_domain(cid) for cid in code_set}


SCOPE_FULL = "full"
SCOPE_OBSERVED = "observed"


def label_universe(
    level: str,
    scope: str,
    t: Taxonomy,
    annotation_sets: Iterable = (),
) -> list[str]:
    """Ordered label universe at a hierarchy level.

    scope="full" lists every label the taxonomy defines at that level;
    scope="observed" lists labels appearing in at least one provided
    annotation set, projected to the level. Ordering is lexicographic by id
    so downstream reports are deterministic.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    if scope == SCOPE_FULL:
        if level == LEVEL_CODE:
            return t.code_ids()
        if level == LEVEL_SUBDOMAIN:
            return t.subdomain_ids()
        return t.domain_ids()
    if scope != SCOPE_OBSERVED:
        raise ValueError(f"scope must be '{SCOPE_FULL}' or '{SCOPE_OBSERVED}', got {scope!r}")

    observed: set[str] = set()
    for ann in annotation_sets:
        labels = getattr(ann, "labels", ann)
        for code_set in labels.values():
            observed |= project(code_set, level, t)
    return sorted(observed)

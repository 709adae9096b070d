"""Versioned prompt templates and structured-output parsing helpers.

Templates live as files under ``raec/prompts`` (never as code constants);
each rendered prompt and each template file has a sha256 digest that goes
into verdict provenance. Backend replies are parsed defensively: the first
balanced JSON object is extracted from the text, so prose or code fences
around the JSON do not break the pipeline.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from string import Template

from .errors import ParseError
from .taxonomy import Taxonomy

_ROLE_MARKER = "## role: "


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    parts: tuple[tuple[str, str], ...]  # (role, body with $placeholders)
    sha256: str

    def render(self, values: dict[str, str]) -> list[tuple[str, str]]:
        return [(role, Template(body).substitute(values)) for role, body in self.parts]


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    """Load prompts/<name>.txt and split it into role-tagged sections."""
    text = resources.files("raec.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    parts: list[tuple[str, str]] = []
    role: str | None = None
    body: list[str] = []
    for line in text.splitlines():
        if line.startswith(_ROLE_MARKER):
            if role is not None:
                parts.append((role, "\n".join(body).strip()))
            role = line[len(_ROLE_MARKER):].strip()
            body = []
        else:
            body.append(line)
    if role is not None:
        parts.append((role, "\n".join(body).strip()))
    if not parts:
        raise ParseError(f"template {name!r} has no role sections")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return PromptTemplate(name=name, parts=tuple(parts), sha256=digest)


def extract_json(text: str) -> dict:
    """Return the first balanced top-level JSON object found in the text."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        parsed = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(parsed, dict):
                        return parsed
                    break
        start = text.find("{", start + 1)
    raise ParseError("no JSON object found in backend response")


def taxonomy_block(t: Taxonomy) -> str:
    """Full domain/subdomain/code definitions, rendered for a prompt."""
    lines: list[str] = []
    for d in t.domains:
        lines.append(f"Domain: {d.name}" + (f" -- {d.definition}" if d.definition else ""))
        for s in t.subdomains:
            if s.domain_id != d.domain_id:
                continue
            lines.append(f"  Subdomain: {s.name}")
            for c in t.codes:
                if c.subdomain_id == s.subdomain_id:
                    lines.append(f"    [{c.code_id}] {c.name}: {c.definition}")
    return "\n".join(lines)

from __future__ import annotations

import pytest

from raec.taxonomy import load_taxonomy, seed_taxonomy


@pytest.fixture(scope="session")
def seed_tax():
    return seed_taxonomy()


@pytest.fixture()
def tiny_tax():
    """Two domains, two subdomains, three codes; c1 and c2 share a subdomain."""
    return load_taxonomy(
        {
            "version": 1,
            "domains": [
                {"id": "d1", "name": "Domain One"},
                {"id": "d2", "name": "Domain Two"},
            ],
            "subdomains": [
                {"id": "s1", "name": "Sub One", "parent": "d1"},
                {"id": "s2", "name": "Sub Two", "parent": "d2"},
            ],
            "codes": [
                {"id": "c1", "name": "Code One", "definition": "first", "parent": "s1"},
                {"id": "c2", "name": "Code Two", "definition": "second", "parent": "s1"},
                {"id": "c3", "name": "Code Three", "definition": "third", "parent": "s2"},
            ],
        }
    )


# --- acceptance summary: one PASS/FAIL line per criterion ---------------------


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            verdict = "PASS" if status == "passed" else "FAIL"
            lines.append((name, verdict))
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, verdict in sorted(lines):
        terminalreporter.write_line(f"[{verdict}] {name}")

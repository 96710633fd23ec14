"""Shared test plumbing.

The acceptance tests register a one-line verdict per criterion through
``record_criterion``; the hook below prints those lines in a block at the
end of the pytest run, after the usual test results, so the acceptance
status is readable at a glance even in a long -v listing.
"""
from __future__ import annotations

_criterion_lines: list[tuple[int, str]] = []


def record_criterion(number: int, title: str, passed: bool, detail: str,
                     status: str | None = None) -> None:
    """Register the printable verdict for one acceptance criterion.

    ``status`` overrides the PASS/FAIL tag for advisory criteria that
    report a measurement without gating on it.
    """
    tag = status or ("PASS" if passed else "FAIL")
    _criterion_lines.append(
        (number, f"criterion {number:>2} {tag:<6} {title}: {detail}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(_criterion_lines):
        terminalreporter.write_line(line)

"""Acceptance battery: one test per criterion at its stated tolerance.

Each criterion's one-line verdict is printed as it runs and again in the
terminal summary, so ``pytest -v`` output shows every pass/fail line.
"""

import json
from pathlib import Path

import pytest

from dopplervfm.acceptance import CRITERIA, AcceptanceContext, format_row

RESULTS = []


@pytest.fixture(scope="session")
def acceptance_context(tmp_path_factory):
    ctx = AcceptanceContext(tmp_path_factory.mktemp("acceptance"))
    yield ctx
    ctx.close()
    if RESULTS:
        report = Path(__file__).resolve().parent.parent / "acceptance_report.json"
        report.write_text(json.dumps(RESULTS, indent=2, default=float))


@pytest.mark.acceptance
@pytest.mark.parametrize("criterion", list(CRITERIA))
def test_criterion(criterion, acceptance_context, capsys):
    row = CRITERIA[criterion](acceptance_context)
    RESULTS.append(row)
    line = format_row(row)
    with capsys.disabled():
        print(f"\n{line}")
    assert row["pass"], line

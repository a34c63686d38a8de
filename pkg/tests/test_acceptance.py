"""The twelve acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary.  Run as a script for the same lines without pytest.
"""

import pytest

from dnls_lab.acceptance import CRITERIA, run_criterion
from dnls_lab.scenario import Report

RECORDS: dict = {}
LINES: list[str] = []


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k):
    rec = run_criterion(k)
    RECORDS[k] = rec
    line = f"criterion {k:2d}: {rec.line()}"
    LINES.append(line)
    print(line)
    assert rec.criterion == k
    assert rec.passed, rec.details


@pytest.mark.slow
def test_each_criterion_reported_once():
    missing = [k for k in CRITERIA if k not in RECORDS]
    for k in missing:
        RECORDS[k] = run_criterion(k)
    rep = Report("acceptance", checks=[RECORDS[k] for k in sorted(RECORDS)])
    assert rep.criteria_once(len(CRITERIA))


if __name__ == "__main__":
    for k in sorted(CRITERIA):
        print(f"criterion {k:2d}: {run_criterion(k).line()}")

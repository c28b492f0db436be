"""Acceptance criteria A1..A9, one test each.

Every test prints the criterion's PASS/FAIL line (also repeated in the
session summary) and then asserts the verdict.
"""

import pytest

from byzagg.acceptance import CRITERIA, run_criterion

from conftest import ACCEPTANCE_LINES


@pytest.mark.slow
@pytest.mark.parametrize("cid", list(CRITERIA))
def test_criterion(cid, capsys):
    res = run_criterion(cid)
    line = res.line()
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert res.passed, line

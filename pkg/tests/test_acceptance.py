"""Reproduction gate: one test per criterion, each printing a pass/fail line.

Tolerances and sample sizes are pinned inside lowbit_optim.acceptance; the
same checks back the ``lowbit-optim repro`` subcommand.  Run with ``-s``
(or ``-rA``) to see the per-criterion lines and timings.
"""

import pytest

from lowbit_optim import acceptance


@pytest.mark.parametrize("cid", sorted(acceptance.CRITERIA))
def test_criterion(cid):
    result = acceptance.run_criterion(cid)
    status = "PASS" if result.passed else "FAIL"
    print(f"[{status}] criterion {cid:2d} ({result.seconds:7.2f}s) "
          f"{result.name}: {result.details}")
    assert result.passed, f"criterion {cid} ({result.name}): {result.details}"

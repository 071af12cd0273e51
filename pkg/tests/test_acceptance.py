"""One PASS/FAIL line per acceptance criterion; tolerances live in ricciotto.checks."""
import pytest

from conftest import ACCEPTANCE_LINES
from ricciotto import checks


def report(results):
    for r in results:
        line = r.line()
        ACCEPTANCE_LINES.append(line)
        print(line)


@pytest.mark.slow
@pytest.mark.parametrize("criterion", list(checks.CRITERIA))
def test_criterion(criterion):
    results, _ = checks.run_checks("full", 1.0, [criterion])
    report(results)
    failed = [r.line() for r in results if r.gated and not r.passed]
    assert not failed, "\n".join(failed)


def test_fast_checks():
    results, elapsed = checks.run_checks("fast")
    report(results)
    assert all(r.passed for r in results if r.gated)
    assert elapsed < 30

import functools
import sys

import pytest
from hypothesis import HealthCheck, settings

from flexsfu import ActivationSpec, FitterConfig, fit

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def _cached_fit(name, interval, n, left, right):
    return fit(ActivationSpec.parse(name), interval, n, FitterConfig(), left, right)


@pytest.fixture(scope="session")
def fitted():
    """Memoised default-config fits shared across test modules."""
    def get(name, interval, n, left=None, right=None):
        return _cached_fit(name, tuple(float(t) for t in interval), n, left, right)
    return get


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not any(mod.RESULTS.values()):
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, title in mod.CRITERIA.items():
        checks = mod.RESULTS[k]
        if not checks:
            tr.write_line(f"criterion {k}: NOT RUN  {title}")
            continue
        failed = [c for c in checks if not c[1]]
        tr.write_line(f"criterion {k}: {'FAIL' if failed else 'PASS'}  {title} "
                      f"({len(checks) - len(failed)}/{len(checks)} checks)")
        for label, _, detail in failed:
            tr.write_line(f"    failed: {label}: {detail}")

from collections import OrderedDict

import pytest

# criterion number -> list of (part, passed, detail)
ACCEPTANCE: "OrderedDict[int, list]" = OrderedDict()


@pytest.fixture
def record():
    def _record(criterion: int, part: str, passed: bool, detail: str):
        ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}: {'ok' if p else 'FAIL'} ({d})" for name, p, d in parts)
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} | {detail}")

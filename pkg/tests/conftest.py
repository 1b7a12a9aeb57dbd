import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for `import oracles`

_VERDICTS: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if report.skipped:
            verdict = "SKIP"
            if not detail and isinstance(report.longrepr, tuple):
                detail = report.longrepr[2]
        elif hasattr(report, "wasxfail"):
            verdict = "FAIL (stretch; does not fail acceptance)"
            detail = detail or report.wasxfail
        else:
            verdict = "PASS" if report.passed else "FAIL"
        _VERDICTS.setdefault(name, []).append((verdict, item.name, detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_VERDICTS):
        rows = _VERDICTS[name]
        verdicts = [v for v, _, _ in rows]
        if any(v == "FAIL" for v in verdicts):
            overall = "FAIL"
        else:
            overall = next((v for v in verdicts if v != "PASS"), "PASS")
        details = " | ".join(d for _, _, d in rows if d)
        terminalreporter.write_line(f"{name}: {overall}" + (f"  ({details})" if details else ""))

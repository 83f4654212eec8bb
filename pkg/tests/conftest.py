"""Per-criterion PASS/FAIL lines for the acceptance suite.

Tests marked ``acceptance(n)`` are grouped by n; a criterion passes when
every test in its group passes. Details recorded with ``record_property``
under the key "detail" are appended to the line.
"""
import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test belongs to acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    entry = _results.setdefault(mark.args[0], {"ok": True, "details": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False
    if rep.when == "call":
        entry["details"] += [f"{item.name.split('[')[0]}: {v}" if rep.failed else v
                             for k, v in item.user_properties if k == "detail"]
        if rep.failed:
            entry["details"].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        r = _results[n]
        line = f"criterion {n:2d}: {'PASS' if r['ok'] else 'FAIL'}"
        if r["details"]:
            line += "  " + "; ".join(r["details"])
        terminalreporter.write_line(line)

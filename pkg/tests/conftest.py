import os
from datetime import datetime, timezone

import pytest

from tempo.temporal import Query, classify_and_resolve

ISSUED = datetime(2020, 6, 10, 9, 0, tzinfo=timezone.utc)


def cq(text, qid="q", issued=ISSUED):
    return classify_and_resolve(Query(qid, text, issued))


@pytest.fixture
def sim_env(monkeypatch):
    """Clear simulator knobs inherited from the caller's environment."""
    for k in list(os.environ):
        if k.startswith("TEMPO_SIM_"):
            monkeypatch.delenv(k, raising=False)
    return monkeypatch


# -- acceptance reporting: one PASS/FAIL line per criterion --------------------------

_verdicts: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    _verdicts[n] = (status, f"{title}{' (' + detail + ')' if detail else ''}")
    print(f"\ncriterion {n}: {status} - {_verdicts[n][1]}")


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        status, text = _verdicts[n]
        terminalreporter.write_line(f"criterion {n}: {status} - {text}")

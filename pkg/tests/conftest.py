import pytest

from fixtures import CASES, chain3, cycle3


@pytest.fixture(params=CASES, ids=lambda c: c.name)
def case(request):
    return request.param


@pytest.fixture
def cycle():
    return cycle3()


@pytest.fixture
def chain():
    return chain3()


# -- acceptance summary ------------------------------------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.skipped or report.failed:
        prev = _criteria.get(name, ("",))[0]
        if prev != "FAIL":
            status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
            detail = dict(report.user_properties).get("measured", "")
            _criteria[name] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda s: int(s.split("_")[2])):
        num = int(name.split("_")[2])
        title = name.split("_", 3)[3].replace("_", " ")
        status, detail = _criteria[name]
        line = f"criterion {num:2d} {status:4s} {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)

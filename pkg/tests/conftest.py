import pytest

CRITERIA = {
    1: "gradient correctness",
    2: "locality invariants",
    3: "complexity accounting",
    4: "temporal-cue benefit",
    5: "module ablation direction",
    6: "auxiliary-frame monotonicity",
    7: "token-size direction",
    8: "overfit sanity",
    9: "persistence",
}

_results: dict = {}


class Recorder:
    def __call__(self, criterion: int, passed: bool, detail: str = "") -> bool:
        prev = _results.get(criterion)
        ok = passed and (prev is None or prev[0])
        _results[criterion] = (ok, "; ".join(filter(None, [prev[1] if prev else "", detail])))
        return passed


@pytest.fixture(scope="session")
def record():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for k, name in CRITERIA.items():
        if k in _results:
            ok, detail = _results[k]
            terminalreporter.write_line(f"criterion {k} ({name}): {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k} ({name}): NOT RUN")

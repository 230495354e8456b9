import pytest

CRITERIA = {
    1: "convergence orders and error magnitudes",
    2: "polynomial exactness",
    3: "frozen state for p=0, beta=1",
    4: "mass conservation",
    5: "energy dissipation",
    6: "reduced vs block system",
    7: "Jacobian vs finite differences",
    8: "droplet stationary states",
    9: "Newton behaviour and stationarity",
    10: "finite volume equivalence",
    11: "breakthrough mass balance and front",
}


class AcceptanceLog:
    def __init__(self):
        self.entries = {}

    def add(self, number, ok, detail):
        self.entries.setdefault(number, []).append((bool(ok), detail))
        return ok

    def lines(self):
        out = []
        for n, title in CRITERIA.items():
            got = self.entries.get(n)
            if not got:
                out.append(f"criterion {n:2d} NOT RUN  {title}")
                continue
            status = "PASS" if all(ok for ok, _ in got) else "FAIL"
            detail = "; ".join(d for _, d in got)
            out.append(f"criterion {n:2d} {status}  {title}: {detail}")
        return out


LOG = AcceptanceLog()


@pytest.fixture
def acceptance():
    return LOG


def pytest_terminal_summary(terminalreporter):
    if not LOG.entries:
        return
    terminalreporter.section("acceptance criteria")
    for line in LOG.lines():
        terminalreporter.write_line(line)

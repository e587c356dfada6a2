import warnings

import pytest
from hypothesis import HealthCheck, settings

from mdptree import families
from mdptree.model import QuotientMdp, build_quotient
from mdptree.sketch import parse_property, parse_sketch

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def load(text, prop='P>=0.5 [ F "goal" ]'):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prog = parse_sketch(text)
        spec = parse_property(prop, prog)
        return prog, spec, build_quotient(prog, spec.target)


@pytest.fixture(scope="session")
def two_member():
    return load(families.TWO_MEMBER_SKETCH)


@pytest.fixture(scope="session")
def two_member_explicit():
    return QuotientMdp.from_members(families.two_member_family(), initial="s0", targets=["sT"])


@pytest.fixture(scope="session")
def trap():
    return load(families.TRAP_SKETCH, 'P>=1 [ F "goal" ]')


@pytest.fixture(scope="session")
def grid():
    return load(families.GRID_SKETCH, 'P>=0.5 [ F (x=6 & y=6) ]')


# one line per acceptance criterion, printed whether or not output is captured
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

import numpy as np
import pytest

from cbcsos.io import fixture_path, load_certificate, load_problem
from cbcsos.synth import synthesize


@pytest.fixture(scope="session")
def vdp():
    return load_problem(fixture_path("vanderpol.json"))


@pytest.fixture(scope="session")
def vdp_cert(vdp):
    return synthesize(vdp.system, vdp.unsafe, vdp.config, vdp.x0, vdp.domain)


@pytest.fixture(scope="session")
def published_b(vdp):
    return load_certificate(fixture_path("appendix_a_cbc.json"), vdp.nvars).b


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

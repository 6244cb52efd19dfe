import math
import sys

import pytest
from hypothesis import settings

from freeconv import measures as M

settings.register_profile("ci", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("ci")

SQRT2 = math.sqrt(2.0)


def two_cut(a=0.5, b=2.0, exps=(0.5, 0.5), weights=(0.5, 0.5)):
    return M.validate({"components": [
        {"support": [-b, -a], "left_exponent": exps[0], "right_exponent": exps[1], "weight": weights[0]},
        {"support": [a, b], "left_exponent": exps[1], "right_exponent": exps[0], "weight": weights[1]},
    ]})


def cusp_atoms():
    return M.atomic([-SQRT2, 0.0, SQRT2], [0.25, 0.5, 0.25])


def plateau_measure(loc=0.0):
    return M.validate({"atoms": [{"location": loc, "mass": 0.6}],
                       "components": [{"support": [-1, 1], "weight": 0.4}], "strict": False})


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def semicircle():
    return M.semicircle()


@pytest.fixture(scope="session")
def bernoulli():
    return M.bernoulli()

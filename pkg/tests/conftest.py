import numpy as np
import pytest

from incstab.certificate import certificate_from_dict
from incstab.sets import Box
from incstab.system import ControlSystem

SQ = {"family": "power", "c": 1.0, "p": 2.0}


def cert_dict(V, metric=None, lo=SQ, hi=SQ, kappa=1.0, **extra):
    d = {"V": V, "metric": metric or {"kind": "euclidean"}, "alpha_lo": lo, "alpha_hi": hi, "kappa": kappa}
    d.update(extra)
    return d


@pytest.fixture
def linear():
    """xdot = -x + u on U = [-1, 1]."""
    return ControlSystem.from_strings(["-x1 + u1"], Box.cube(-1, 1, 1), name="linear")


@pytest.fixture
def drift():
    """xdot = -1 + u on U = [-0.5, 0.5]."""
    return ControlSystem.from_strings(["-1 + u1"], Box.cube(-0.5, 0.5, 1), name="drift")


@pytest.fixture
def decay():
    return ControlSystem.from_strings(["-x1"], name="decay")


@pytest.fixture
def pullback_cert():
    return certificate_from_dict(
        cert_dict("(exp(x1)-exp(y1))^2", {"kind": "pullback", "map": ["exp(x1)"]}, kappa=1.0), 1
    )


def euclid_cert(kappa, n=1):
    return certificate_from_dict(cert_dict("(x1-y1)^2", kappa=kappa), n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from aerotrack.fleet import synthetic_fleet
from aerotrack.synth import default_prior
from helpers import default_intrinsics, oblique_pose


@pytest.fixture(scope="session")
def fleet():
    return synthetic_fleet(200, 0)


@pytest.fixture(scope="session")
def prior():
    return default_prior()


@pytest.fixture(scope="session")
def intrinsics():
    return default_intrinsics()


@pytest.fixture(scope="session")
def camera_pose():
    return oblique_pose()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def noiseless_intersection(tmp_path_factory):
    """The 10-vehicle intersection scene, reconstructed once with the default config."""
    from aerotrack.pipeline import run_scenario
    from aerotrack.synth import intersection_scenario

    return run_scenario(intersection_scenario(pixel_sigma=0.0), tmp_path_factory.mktemp("intersection"))


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(capsys):
    """Report one acceptance criterion: prints a PASS/FAIL line and asserts on it."""

    def report(number, title, passed, detail):
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

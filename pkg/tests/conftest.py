import numpy as np
import pytest

from spurcorr import CovarianceModel, GroundTruth, SyntheticFamilyParams, build_synthetic


@pytest.fixture(scope="session")
def default_model():
    return build_synthetic(SyntheticFamilyParams(400, 2.0, 0.5))


@pytest.fixture(scope="session")
def default_gt():
    return GroundTruth.first_basis(400, 0.25)


@pytest.fixture
def alpha_model():
    """d = 1, unit variances, cross-covariance 0.5."""
    return CovarianceModel(np.array([[1.0, 0.5], [0.5, 1.0]]))


@pytest.fixture
def scalar_gt():
    return GroundTruth(np.array([1.0]), 0.25)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from dualcatch.geometry import UnitQuaternion
from dualcatch.kinematics import consistent_configuration, default_model
from dualcatch.sim import opening_up_pose


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def consistent_q(model):
    """Chain-consistent 14-vector near the home posture."""
    q = consistent_configuration(model, opening_up_pose([0.55, 0.0, 0.45], 0.1), model.home_q)
    assert q is not None
    return q


def random_quat(rng: np.random.Generator) -> UnitQuaternion:
    return UnitQuaternion.from_array(rng.normal(size=4))


def fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(ACCEPTANCE, []).append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from predict_cluster.skeleton import ActionSequence

JM = {"root": 0, "spine": 1, "hip_left": 2, "hip_right": 3}


def random_skeleton(rng, T=6, J=7):
    """Random but well-conditioned skeleton: spine up, hips sideways, extra joints scattered."""
    f = rng.normal(0.0, 0.3, (T, J, 3))
    f[:, 0] = rng.normal(0, 0.05, (T, 3))
    f[:, 1] = f[:, 0] + np.array([0.0, 0.5, 0.0]) + rng.normal(0, 0.05, (T, 3))
    f[:, 2] = f[:, 0] + np.array([0.2, 0.0, 0.0]) + rng.normal(0, 0.05, (T, 3))
    f[:, 3] = f[:, 0] + np.array([-0.2, 0.0, 0.0]) + rng.normal(0, 0.05, (T, 3))
    return ActionSequence(frames=f, joint_map=dict(JM), label=0, id="x")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register their outcome here; printed after the run
ACCEPTANCE_RESULTS = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)

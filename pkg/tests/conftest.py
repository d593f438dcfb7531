import numpy as np
import pytest

ACCEPTANCE_LINES = []


def kalman_reference(ys, A, C, m0, P0, sq, sr):
    """Exact Kalman filter means and marginal variances for isotropic noise."""
    k = len(m0)
    m, P = np.asarray(m0, float), np.asarray(P0, float)
    means, variances = [], []
    for y in ys:
        m = A @ m
        P = A @ P @ A.T + sq ** 2 * np.eye(k)
        S = C @ P @ C.T + sr ** 2 * np.eye(C.shape[0])
        K = np.linalg.solve(S, C @ P).T
        m = m + K @ (y - C @ m)
        P = (np.eye(k) - K @ C) @ P
        means.append(m)
        variances.append(np.diag(P).copy())
    return np.array(means), np.array(variances)


@pytest.fixture(scope="session")
def kalman_problem():
    A = np.array([[0.9, 0.2], [-0.1, 0.8]])
    sq, sr = 0.5, 1.0
    rng = np.random.default_rng(0)
    x, ys = np.zeros(2), []
    for _ in range(100):
        x = A @ x + sq * rng.normal(size=2)
        ys.append(x + sr * rng.normal(size=2))
    ys = np.array(ys)
    kfm, kfP = kalman_reference(ys, A, np.eye(2), np.zeros(2), np.eye(2), sq, sr)
    return ys, A, kfm, kfP, sq, sr


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

"""Shared fixtures and independent oracles for the test suite."""
import numpy as np
import pytest

from ddmhe.plant import NoiseSpec, collect_offline_data, four_tank_linear


def random_controllable(rng, n, m, p, radius=0.9):
    """Random ``(A, B, C)`` with ``A`` Schur and ``(A, B)`` controllable."""
    while True:
        A = rng.standard_normal((n, n))
        A *= radius / max(1e-9, np.max(np.abs(np.linalg.eigvals(A))))
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
        if np.linalg.matrix_rank(ctrb) == n:
            return A, B, C


def kkt_oracle(H, f, A_eq, b_eq):
    """Solution of ``min 0.5 z'Hz + f'z s.t. A_eq z = b_eq`` from the saddle-point system."""
    d, k = H.shape[0], A_eq.shape[0]
    K = np.block([[H, A_eq.T], [A_eq, np.zeros((k, k))]])
    sol = np.linalg.solve(K, np.concatenate([-f, b_eq]))
    return sol[:d], sol[d:]


def lyapunov_oracle(A, Q):
    """``P`` with ``A'PA - P + Q = 0`` via the Kronecker-vectorized linear system."""
    n = A.shape[0]
    M = np.kron(A.T, A.T) - np.eye(n * n)
    return np.linalg.solve(M, -Q.reshape(-1, order="F")).reshape(n, n, order="F")


def simulate_oracle(A, B, C, x0, u):
    """Plain loop simulation used to cross-check the package simulators."""
    x = [np.asarray(x0, float)]
    for k in range(len(u) - 1):
        x.append(A @ x[-1] + B @ u[k])
    x = np.array(x)
    return x, x @ C.T


@pytest.fixture(scope="session")
def fourtank():
    return four_tank_linear()


@pytest.fixture(scope="session")
def clean_fourtank_data(fourtank):
    """Noise-free offline record of the linear four-tank plant, N = 100."""
    return collect_offline_data(fourtank, NoiseSpec.uniform(0.0, 20.0, seed=1), 100)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "RESULTS", None):
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)

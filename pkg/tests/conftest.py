import numpy as np
import pytest

from stochbt.system import StochasticSystem, random_stable_system


@pytest.fixture
def scalar_noisy():
    return StochasticSystem.create([[-1.0]], B=[[1.0]], C=[[1.0]], N=[[[0.5]]], X0=[[1.0]],
                                   label="scalar-noisy")


@pytest.fixture
def scalar_det():
    return StochasticSystem.create([[-1.0]], B=[[1.0]], C=[[1.0]], X0=[[1.0]])


def batch(seed, count, n_range=(2, 6), q_max=2, dims_max=2):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        m, p, d = (int(x) for x in rng.integers(1, dims_max + 1, size=3))
        q = int(rng.integers(1, q_max + 1))
        out.append(random_stable_system(rng, n, m=m, p=p, q=q, d=d, label=f"batch-{seed}-{k}"))
    return out


@pytest.fixture
def small_batch():
    return batch(11, 6)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        passed, detail = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if passed else 'FAIL'}  {detail}")

import numpy as np
import pytest


def random_psd(rng, t, cond_max=1e6):
    """Random symmetric PD matrix with condition number at most cond_max."""
    Q, R = np.linalg.qr(rng.standard_normal((t, t)))
    Q = Q * np.sign(np.diag(R))
    log_cond = rng.uniform(0.0, np.log10(cond_max))
    lam = np.logspace(0.0, -log_cond, t) * rng.uniform(0.1, 10.0)
    rng.shuffle(lam)
    V = (Q * lam) @ Q.T
    return 0.5 * (V + V.T)


def random_decreasing(rng, t, lo=1e-3, hi=10.0):
    d = np.sort(rng.uniform(lo, hi, size=t))[::-1]
    # uniform draws essentially never tie; keep a guard anyway
    assert np.all(np.diff(d) < 0)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(20221)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def criterion():
    """record(label, ok, detail): one verdict line per acceptance criterion."""
    def record(label, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)

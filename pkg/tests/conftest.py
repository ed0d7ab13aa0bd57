import numpy as np
import pytest


def fd_check(loss, arrays, analytic, step=1e-6, rtol=1e-5, atol=1e-7, max_entries=None, rng=None):
    """Compare analytic gradients against central differences.

    ``arrays`` and ``analytic`` are parallel lists of real arrays; ``loss()``
    must read the arrays in place. Returns the worst (error, tolerance) pair.
    """
    worst = (0.0, 1.0)
    for arr, grad in zip(arrays, analytic):
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            lp = loss()
            flat[i] = old - step
            lm = loss()
            flat[i] = old
            fd = (lp - lm) / (2 * step)
            err = abs(gflat[i] - fd)
            tol = max(rtol * abs(fd), atol)
            assert err <= tol, f"entry {i}: analytic {gflat[i]!r} vs fd {fd!r}"
            if err / tol > worst[0] / worst[1]:
                worst = (err, tol)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hermitian(rng, n, k=None):
    shape = (n, n) if k is None else (n, n, k)
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return 0.5 * (a + np.conj(np.swapaxes(a, 0, 1)))


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records and prints one PASS/FAIL line."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])

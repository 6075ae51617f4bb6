import importlib

import numpy as np
import pytest

from tailbench import _backend, _fallback

needs_cython = pytest.mark.skipif(_backend.BACKEND != "cython", reason="compiled kernels not built")


def test_backend_selection_env(monkeypatch):
    monkeypatch.setenv("TAILBENCH_BACKEND", "python")
    mod = importlib.reload(_backend)
    try:
        assert mod.BACKEND == "python"
        assert mod.get("sgd_block") is _fallback.sgd_block
    finally:
        monkeypatch.delenv("TAILBENCH_BACKEND")
        importlib.reload(_backend)


def test_workers_env(monkeypatch):
    monkeypatch.setenv("TAILBENCH_WORKERS", "3")
    assert _backend.workers() == 3
    monkeypatch.setenv("TAILBENCH_WORKERS", "0")
    assert _backend.workers() == 1


@needs_cython
def test_sgd_block_agreement():
    from tailbench import _kernels
    rng = np.random.default_rng(0)
    A, b = rng.uniform(size=(40, 5)), rng.standard_normal(40)
    X = rng.standard_normal((6, 5))
    idx = rng.integers(0, 40, size=(6, 200, 2)).astype(np.int64)
    X1, X2 = X.copy(), X.copy()
    _kernels.sgd_block(A, b, X1, idx, 0.05, 0.02, np.inf)
    _fallback.sgd_block(A, b, X2, idx, 0.05, 0.02, np.inf)
    np.testing.assert_allclose(X1, X2, rtol=0, atol=1e-11)


@needs_cython
@pytest.mark.parametrize("coupled", [True, False])
def test_em_steps_agreement(coupled):
    from tailbench import _kernels
    rng = np.random.default_rng(1)
    th, mu, a = np.array([1.0, 0.3, 0.1]), np.array([0.2, 0.0, -0.1]), np.array([0.1, 0.2, 0.05])
    Z = rng.standard_normal((9, 3))
    dW = rng.standard_normal((500, 9, 3))
    Z1, Z2 = Z.copy(), Z.copy()
    _kernels.em_steps(Z1, dW, th, mu, a, 0.01, coupled)
    _fallback.em_steps(Z2, dW, th, mu, a, 0.01, coupled)
    np.testing.assert_allclose(Z1, Z2, rtol=0, atol=1e-11)

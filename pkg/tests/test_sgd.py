import itertools
import json
import math

import numpy as np
import pytest

from tailbench import _backend
from tailbench.dataio import Dataset
from tailbench.sgd import (DivergenceError, InitSampler, OptimConfig, export_ensemble,
                           full_gradient, gradient_noise_covariance, minibatch_gradient,
                           project_dominant, replica_seed, ridge_solution, run_ensemble,
                           sample_batch, sgd_run, splitmix64)


def test_sample_batch_single_element(rng):
    assert sample_batch(1, 3, rng).tolist() == [0, 0, 0]


def test_sample_batch_uniform_frequencies(rng):
    draws = sample_batch(10, 100_000, rng)
    counts = np.bincount(draws, minlength=10)
    sd = math.sqrt(1e5 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 1e4) <= 3 * sd)


def test_batch_count_moments(rng):
    # counts s_i of index i in a batch of size B drawn with replacement
    n, B, trials = 5, 3, 100_000
    idx = rng.integers(0, n, size=(trials, B))
    s = np.stack([(idx == i).sum(axis=1) for i in range(n)], axis=1)
    m1 = s[:, 0].astype(float)
    m12 = (s[:, 0] * s[:, 1]).astype(float)
    assert abs(m1.mean() - B / n) <= 3 * m1.std() / math.sqrt(trials)
    assert abs(m12.mean() - B * (B - 1) / n**2) <= 3 * m12.std() / math.sqrt(trials)


def test_minibatch_gradient_hand_value():
    ds = Dataset(np.array([[1.0, 0.0]]), np.array([1.0]))
    np.testing.assert_array_equal(minibatch_gradient(ds, np.zeros(2), [0], 0.0), [-1.0, 0.0])


def test_full_batch_gradient_zero_at_least_squares_solution(small_ds):
    x = ridge_solution(small_ds, 0.0)
    g = minibatch_gradient(small_ds, x, np.arange(small_ds.n), 0.0)
    assert np.max(np.abs(g)) <= 1e-10


def test_minibatch_gradient_finite_difference(small_ds, rng):
    x = rng.standard_normal(small_ds.d)
    batch = rng.integers(0, small_ds.n, size=4)
    delta = 0.3

    def loss(v):
        r = small_ds.A[batch] @ v - small_ds.b[batch]
        return 0.5 * np.mean(r * r) + 0.5 * delta * v @ v

    eps = 1e-6
    fd = np.array([(loss(x + eps * e) - loss(x - eps * e)) / (2 * eps) for e in np.eye(small_ds.d)])
    np.testing.assert_allclose(minibatch_gradient(small_ds, x, batch, delta), fd, rtol=1e-6)


def test_zero_step_keeps_start(small_ds, rng):
    x0 = rng.standard_normal(small_ds.d)
    out = sgd_run(small_ds, OptimConfig(gamma=0.0, K=50, B=2), x0, rng)
    assert np.array_equal(out, x0)


def test_one_step_hand_evaluation(small_ds):
    cfg = OptimConfig(gamma=0.1, delta=0.2, B=1, K=1)
    x0 = np.linspace(-1, 1, small_ds.d)
    i = int(np.random.default_rng(3).integers(0, small_ds.n, size=(1, 1, 1))[0, 0, 0])
    a, b = small_ds.A[i], small_ds.b[i]
    expect = x0 - cfg.gamma * ((a @ x0 - b) * a + cfg.delta * x0)
    out = sgd_run(small_ds, cfg, x0, np.random.default_rng(3))
    np.testing.assert_allclose(out, expect, rtol=1e-14, atol=1e-15)


def test_full_batch_descent_converges_geometrically(small_ds):
    delta = 0.01
    lam1 = np.linalg.norm(small_ds.A, 2)
    gamma = 1.0 / (lam1**2 / small_ds.n + delta)
    xr = ridge_solution(small_ds, delta)
    _, path = sgd_run(small_ds, OptimConfig(gamma=gamma, delta=delta, K=200), np.zeros(small_ds.d),
                      None, trajectory=True, full_batch=True)
    err = np.linalg.norm(path - xr, axis=1)
    assert np.all(np.diff(err) <= 1e-15)
    lam_d = np.linalg.svd(small_ds.A, compute_uv=False)[-1]
    rate = 1 - gamma * (lam_d**2 / small_ds.n + delta)
    assert err[-1] <= err[0] * rate**200 * (1 + 1e-8) + 1e-14


def test_trajectory_matches_kernel_path(small_ds):
    cfg = OptimConfig(gamma=0.05, B=3, K=40)
    x0 = np.ones(small_ds.d)
    fast = sgd_run(small_ds, cfg, x0, np.random.default_rng(8))
    # the trajectory path samples batches one step at a time from the same stream
    xk, path = sgd_run(small_ds, cfg, x0, np.random.default_rng(8), trajectory=True)
    assert path.shape == (41, small_ds.d)
    np.testing.assert_allclose(xk, fast, rtol=1e-12, atol=1e-14)


def test_divergence_guard(small_ds):
    cfg = OptimConfig(gamma=50.0, K=500)
    with pytest.raises(DivergenceError) as exc:
        sgd_run(small_ds, cfg, np.ones(small_ds.d), np.random.default_rng(0), guard=1e12)
    assert 0 <= exc.value.step < 500
    ens = run_ensemble(small_ds, OptimConfig(gamma=50.0, K=500, replicas=3), guard=1e12)
    assert ens.divergent_replicas == [0, 1, 2]


def test_noise_covariance_single_point_is_zero():
    ds = Dataset(np.array([[1.0, 2.0]]), np.array([0.5]))
    assert np.array_equal(gradient_noise_covariance(ds, np.array([0.3, -1.0]), 2), np.zeros((2, 2)))


def test_noise_covariance_enumeration_n3_d2_B2():
    A = np.array([[1.0, 0.5], [-0.3, 2.0], [0.7, 0.1]])
    b = np.array([0.2, -1.0, 0.4])
    ds, x = Dataset(A, b), np.array([0.6, -0.2])
    full = full_gradient(ds, x, 0.0)
    C = np.zeros((2, 2))
    for batch in itertools.product(range(3), repeat=2):
        g = minibatch_gradient(ds, x, list(batch), 0.0) - full
        C += np.outer(g, g) / 9
    np.testing.assert_allclose(gradient_noise_covariance(ds, x, 2), C, atol=1e-15)


def test_noise_covariance_batch_scaling(small_ds, rng):
    x = rng.standard_normal(small_ds.d)
    C1 = gradient_noise_covariance(small_ds, x, 1)
    np.testing.assert_allclose(gradient_noise_covariance(small_ds, x, 5), C1 / 5, rtol=1e-14)


def test_minibatch_gradient_unbiased(small_ds, rng):
    x = rng.standard_normal(small_ds.d)
    draws = np.array([minibatch_gradient(small_ds, x, sample_batch(small_ds.n, 2, rng), 0.1)
                      for _ in range(20_000)])
    se = draws.std(axis=0) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - full_gradient(small_ds, x, 0.1)) <= 4 * se)


def test_splitmix_reference_values():
    # reference outputs of the public splitmix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert replica_seed(7, 3) == splitmix64(splitmix64(7) ^ 3)


def test_single_replica_matches_sgd_run(small_ds, small_spec):
    cfg = OptimConfig(gamma=0.05, B=2, K=60, seed=11, replicas=1)
    ens = run_ensemble(small_ds, cfg, spec=small_spec)
    rng = np.random.default_rng(replica_seed(11, 0))
    x0 = InitSampler().draw(rng, small_ds.d)
    np.testing.assert_array_equal(ens.finals[0], sgd_run(small_ds, cfg, x0, rng))


def test_ensemble_independent_of_blocks_and_workers(small_ds, small_spec):
    cfg = OptimConfig(gamma=0.05, B=1, K=80, seed=2, replicas=23)
    ref = run_ensemble(small_ds, cfg, spec=small_spec)
    for block, workers in ((1, 1), (5, 3), (64, 4)):
        other = run_ensemble(small_ds, cfg, spec=small_spec, block=block, workers=workers)
        assert np.array_equal(other.finals, ref.finals)
    again = run_ensemble(small_ds, cfg, spec=small_spec)
    assert np.array_equal(again.finals, ref.finals)
    np.testing.assert_allclose(ref.projected, ref.finals @ small_spec.q1, atol=1e-12)


def test_ensemble_backends_agree(small_ds, small_spec):
    if _backend.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    cfg = OptimConfig(gamma=0.05, delta=0.01, B=3, K=100, seed=5, replicas=9)
    a = run_ensemble(small_ds, cfg, spec=small_spec, backend="cython")
    b = run_ensemble(small_ds, cfg, spec=small_spec, backend="python")
    np.testing.assert_allclose(a.finals, b.finals, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("kind,check", [
    ("zero", lambda x: np.all(x == 0)),
    ("uniform", lambda x: np.all((x >= -1) & (x <= 1))),
    ("normal", lambda x: np.isfinite(x).all()),
])
def test_init_samplers(kind, check):
    assert check(InitSampler(kind=kind).draw(np.random.default_rng(0), 50))
    with pytest.raises(ValueError):
        InitSampler(kind="cauchy").draw(np.random.default_rng(0), 3)


def test_project_dominant_examples(small_spec):
    q = small_spec.Q
    y, z = project_dominant(np.stack([q[:, 0], q[:, 1], 3 * q[:, 0]]), small_spec)
    np.testing.assert_allclose(y, [1.0, 0.0, 3.0], atol=1e-12)
    assert abs(z.mean()) <= 1e-12
    with pytest.raises(ValueError):
        project_dominant(np.ones((2, small_spec.d + 1)), small_spec)


@pytest.mark.parametrize("kw", [dict(gamma=-1), dict(gamma=0.1, delta=-1), dict(gamma=0.1, B=0),
                                dict(gamma=0.1, K=0), dict(gamma=0.1, replicas=0),
                                dict(gamma=0.1, B=1.5)])
def test_optim_config_validation(kw):
    with pytest.raises(ValueError):
        OptimConfig(**kw)


def test_export_ensemble(tmp_path, small_ds, small_spec):
    ens = run_ensemble(small_ds, OptimConfig(gamma=0.05, K=10, replicas=4), spec=small_spec)
    export_ensemble(ens, small_spec, tmp_path / "e.csv", tmp_path / "e.json")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "replica,y,z" and len(lines) == 5
    side = json.loads((tmp_path / "e.json").read_text())
    assert side["dataset_digest"] == small_ds.digest() and side["divergent_replicas"] == []

"""Minibatch SGD on the ridge objective and the ensemble protocol.

The per-sample loss is ``0.5 * (a_i . x - b_i)**2 + 0.5 * delta * |x|^2``;
batches are drawn uniformly *with* replacement.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .dataio import Dataset, Spectrum

_MASK64 = (1 << 64) - 1


class DivergenceError(RuntimeError):
    def __init__(self, step, norm):
        super().__init__(f"SGD iterate diverged at step {step} (|x| = {norm:.3e})")
        self.step = step
        self.norm = norm


@dataclass(frozen=True)
class OptimConfig:
    gamma: float
    delta: float = 0.0
    B: int = 1
    K: int = 1000
    seed: int = 0
    replicas: int = 1

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        if int(self.B) != self.B or self.B < 1:
            raise ValueError(f"batch size must be a positive integer, got {self.B}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"iteration count must be >= 1, got {self.K}")
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")
        object.__setattr__(self, "B", int(self.B))
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "replicas", int(self.replicas))


@dataclass
class Ensemble:
    finals: np.ndarray
    projected: np.ndarray
    config: OptimConfig
    dataset_digest: str
    divergent: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    meta: dict = field(default_factory=dict)

    @property
    def divergent_replicas(self) -> list[int]:
        return [int(r) for r in np.flatnonzero(self.divergent >= 0)]


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def replica_seed(seed: int, r: int) -> int:
    """64-bit seed for replica ``r``: splitmix64(splitmix64(seed) ^ r)."""
    return splitmix64(splitmix64(int(seed) & _MASK64) ^ (int(r) & _MASK64))


def sample_batch(n, B, rng):
    """``B`` i.i.d. uniform indices in ``range(n)`` (0-based, with replacement)."""
    if n < 1 or B < 1:
        raise ValueError("need n >= 1 and B >= 1")
    return rng.integers(0, n, size=B)


def full_gradient(ds: Dataset, x, delta):
    return ds.A.T @ (ds.A @ x - ds.b) / ds.n + delta * x


def minibatch_gradient(ds: Dataset, x, batch, delta):
    """Gradient of the batch-averaged ridge loss; repeated indices count twice."""
    batch = np.asarray(batch)
    rows = ds.A[batch]
    res = rows @ x - ds.b[batch]
    return rows.T @ res / batch.size + delta * x


def ridge_solution(ds: Dataset, delta):
    """Minimizer of ``f``: (A^T A / n + delta I)^{-1} A^T b / n."""
    H = ds.A.T @ ds.A / ds.n + delta * np.eye(ds.d)
    return np.linalg.solve(H, ds.A.T @ ds.b / ds.n)


def gradient_noise_covariance(ds: Dataset, x, B):
    """Covariance of the minibatch gradient around the full gradient.

    ``(1/B) [ (1/n) sum_i g_i g_i^T - (1/n^2) g g^T ]`` with ``g_i`` the
    per-sample gradient of the unregularized loss and ``g = sum_i g_i``.
    """
    res = ds.A @ x - ds.b
    G = ds.A * res[:, None]                     # rows are per-sample gradients
    g = G.sum(axis=0)
    n = ds.n
    C = (G.T @ G / n - np.outer(g, g) / n**2) / B
    return 0.5 * (C + C.T)


def sgd_run(ds: Dataset, cfg: OptimConfig, x0, rng, *, trajectory=False,
            full_batch=False, guard=None):
    """Run ``cfg.K`` SGD steps from ``x0``.

    Returns the final iterate, or ``(x_K, path)`` with ``path`` of shape
    ``(K + 1, d)`` when ``trajectory`` is set.  ``full_batch`` replaces the
    sampled batch by the exact gradient (deterministic gradient descent).
    ``guard`` aborts with :class:`DivergenceError` once ``|x_k|`` exceeds it.
    """
    x = np.array(x0, dtype=float, copy=True)
    if x.shape != (ds.d,) or not np.isfinite(x).all():
        raise ValueError("x0 must be a finite vector of length d")
    if not trajectory and not full_batch:
        idx = rng.integers(0, ds.n, size=(1, cfg.K, cfg.B)).astype(np.int64)
        X = x[None, :].copy()
        div = _backend.sgd_block(ds.A, ds.b, X, idx, float(cfg.gamma), float(cfg.delta),
                                 math.inf if guard is None else float(guard))
        if guard is not None and div[0] >= 0:
            raise DivergenceError(int(div[0]), float(np.linalg.norm(X[0])))
        return X[0]
    path = [x.copy()] if trajectory else None
    for k in range(cfg.K):
        if full_batch:
            g = full_gradient(ds, x, cfg.delta)
        else:
            g = minibatch_gradient(ds, x, sample_batch(ds.n, cfg.B, rng), cfg.delta)
        x = x - cfg.gamma * g
        nrm = float(np.linalg.norm(x))
        if guard is not None and not nrm <= guard:
            raise DivergenceError(k, nrm)
        if trajectory:
            path.append(x.copy())
    if trajectory:
        return x, np.array(path)
    return x


@dataclass(frozen=True)
class InitSampler:
    """Distribution of initial points: normal, zero, uniform or a fixed point."""

    kind: str = "normal"
    scale: float = 1.0
    low: float = -1.0
    high: float = 1.0
    center: tuple | None = None

    def draw(self, rng, d):
        c = np.zeros(d) if self.center is None else np.asarray(self.center, dtype=float)
        if self.kind == "normal":
            return c + self.scale * rng.standard_normal(d)
        if self.kind == "zero":
            return c.copy()
        if self.kind == "uniform":
            return c + rng.uniform(self.low, self.high, size=d)
        raise ValueError(f"unknown init sampler {self.kind!r}")

    @classmethod
    def from_dict(cls, spec):
        if spec is None:
            return cls()
        if isinstance(spec, cls):
            return spec
        spec = dict(spec)
        if "center" in spec and spec["center"] is not None:
            spec["center"] = tuple(spec["center"])
        return cls(**spec)


def _replica_streams(ds, cfg, init, replicas):
    X0 = np.empty((len(replicas), ds.d))
    idx = np.empty((len(replicas), cfg.K, cfg.B), dtype=np.int64)
    for j, r in enumerate(replicas):
        rng = np.random.default_rng(replica_seed(cfg.seed, r))
        X0[j] = init.draw(rng, ds.d)
        idx[j] = rng.integers(0, ds.n, size=(cfg.K, cfg.B))
    return X0, idx


def run_ensemble(ds: Dataset, cfg: OptimConfig, init_sampler=None, spec: Spectrum | None = None,
                 *, guard=None, block=64, workers=None, backend=None) -> Ensemble:
    """``cfg.replicas`` independent SGD runs and their final iterates.

    Replica ``r`` draws its start point and its batch indices from its own
    generator seeded with :func:`replica_seed`, so results do not depend on
    block size, worker count or execution order.  Diverging replicas are
    flagged in ``Ensemble.divergent`` (step index, -1 if fine).
    """
    init = InitSampler.from_dict(init_sampler)
    R = cfg.replicas
    kernel = _backend.get("sgd_block", backend)
    guard_v = math.inf if guard is None else float(guard)
    finals = np.empty((R, ds.d))
    divergent = np.full(R, -1, dtype=np.int64)
    blocks = [list(range(s, min(s + block, R))) for s in range(0, R, block)]

    def work(reps):
        X, idx = _replica_streams(ds, cfg, init, reps)
        div = kernel(ds.A, ds.b, X, idx, float(cfg.gamma), float(cfg.delta), guard_v)
        return reps, X, div

    n_workers = workers or _backend.workers()
    if n_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    for reps, X, div in results:
        finals[reps] = X
        divergent[reps] = div
    if spec is None:
        from .dataio import spectral
        spec = spectral(ds, cfg.delta, strict=False)
    projected = finals @ spec.q1
    meta = {
        "init": asdict(init),
        "seeding": "per-replica splitmix64(splitmix64(seed) ^ r); start point and batch stream both vary",
        "backend": _backend.BACKEND if backend is None else backend,
    }
    return Ensemble(finals, projected, cfg, ds.digest(), divergent, meta)


def project_dominant(ensemble_or_finals, spec: Spectrum):
    """Project final iterates on ``q_1``; returns ``(y, z)`` with ``z = y - mean(y)``."""
    finals = getattr(ensemble_or_finals, "finals", ensemble_or_finals)
    finals = np.atleast_2d(np.asarray(finals, dtype=float))
    if finals.shape[1] != spec.Q.shape[0]:
        raise ValueError(
            f"iterates have dimension {finals.shape[1]}, spectrum has {spec.Q.shape[0]}"
        )
    y = finals @ spec.q1
    finite = y[np.isfinite(y)]
    z = y - (finite.mean() if finite.size else 0.0)
    return y, z


def export_ensemble(ens: Ensemble, spec: Spectrum, csv_path, sidecar_path=None):
    y, z = project_dominant(ens, spec)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "y", "z"])
        for r in range(y.size):
            w.writerow([r, repr(float(y[r])), repr(float(z[r]))])
    if sidecar_path is not None:
        side = {
            "config": asdict(ens.config),
            "dataset_digest": ens.dataset_digest,
            "divergent_replicas": ens.divergent_replicas,
            "meta": ens.meta,
        }
        Path(sidecar_path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")

"""Homogenized-SGD diffusion, its rescaled coupled system, and Pearson diffusions.

Rescaled coordinates ``Z_i = lambda_i * (Q^T (x - x*))_i / sqrt(beta)`` obey

    dZ_i = -theta_i (Z_i - mu_i) dt + sqrt(2 theta_i a_i (|Z|^2 + 1)) dB_i

and each coordinate is compared with the decoupled Pearson diffusion that has
``Z_i^2`` in place of ``|Z|^2``.  All simulators use Euler-Maruyama with a
uniform step; Brownian increments can be injected to couple simulations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .dataio import AssumptionViolation, Dataset, Spectrum
from .linalg import expm
from .sgd import OptimConfig

_CHUNK_ELEMS = 1 << 21
MAX_MOMENT_ORDER = 30


class SimulationError(RuntimeError):
    def __init__(self, step, what="state"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class PearsonParams:
    theta: np.ndarray
    mu: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        th, mu, a = np.broadcast_arrays(th, mu, a)
        if not (th > 0).all():
            raise ValueError("theta must be positive")
        if not (a > 0).all():
            raise ValueError("a must be positive")
        for name, v in (("theta", th), ("mu", mu), ("a", a)):
            object.__setattr__(self, name, np.ascontiguousarray(v, dtype=float))

    @property
    def nu(self) -> np.ndarray:
        return 1.0 + 1.0 / self.a

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    def coordinate(self, i) -> "PearsonParams":
        return PearsonParams(self.theta[i], self.mu[i], self.a[i])

    @classmethod
    def from_nu(cls, theta, nu, mu=0.0):
        """Parameters with tail index ``nu`` (requires nu > 1)."""
        nu = np.asarray(nu, dtype=float)
        if not (nu > 1).all():
            raise ValueError("nu must exceed 1")
        return cls(theta, mu, 1.0 / (nu - 1.0))


@dataclass
class SdePath:
    times: np.ndarray
    states: np.ndarray
    h: float
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def build_pearson_params(spec: Spectrum, cfg: OptimConfig) -> PearsonParams:
    """Per-coordinate (theta, mu, a) of the rescaled hSGD system."""
    lam = np.asarray(spec.sigma, dtype=float)
    n, B, gamma, delta = spec.n, cfg.B, cfg.gamma, cfg.delta
    if not spec.beta > 0:
        raise AssumptionViolation(f"beta must be positive, got {spec.beta}")
    if not (lam > 0).all():
        raise AssumptionViolation("all singular values must be positive")
    if not gamma > 0:
        raise ValueError("gamma must be positive to define the diffusion")
    lam2 = lam**2
    theta = gamma * (lam2 / n + delta)
    a = gamma * lam2**2 / (2.0 * n * B * (lam2 + n * delta))
    mu = n * lam * spec.alpha / (math.sqrt(spec.beta) * (lam2 + n * delta))
    return PearsonParams(theta, mu, a)


def default_step(params: PearsonParams) -> float:
    return 0.01 / float(np.max(params.theta))


def _step_count(h, T):
    if not h > 0:
        raise ValueError("step size must be positive")
    if not T >= 0:
        raise ValueError("horizon must be non-negative")
    steps = int(math.ceil(T / h - 1e-9))
    return max(steps, 0)


def _noise_chunks(rng, increments, steps, shape):
    """Yield standard-normal increment blocks of shape (s, *shape)."""
    if increments is not None:
        inc = np.asarray(increments, dtype=float)
        if inc.shape != (steps, *shape):
            raise ValueError(f"increments have shape {inc.shape}, expected {(steps, *shape)}")
        per = max(1, _CHUNK_ELEMS // max(1, int(np.prod(shape))))
        for s in range(0, steps, per):
            yield np.ascontiguousarray(inc[s:s + per])
        return
    per = max(1, _CHUNK_ELEMS // max(1, int(np.prod(shape))))
    for s in range(0, steps, per):
        yield rng.standard_normal((min(per, steps - s), *shape))


def _simulate(params, Z0, h, T, rng, coupled, increments, record_every, backend):
    kernel = _backend.get("em_steps", backend)
    steps = _step_count(h, T)
    h_eff = T / steps if steps else h
    Z = np.array(Z0, dtype=float, order="C", copy=True)
    times, states = [0.0], [Z.copy()]
    done = 0
    for chunk in _noise_chunks(rng, increments, steps, Z.shape):
        pos = 0
        while pos < chunk.shape[0]:
            if record_every:
                until = record_every - done % record_every
                take = min(until, chunk.shape[0] - pos)
            else:
                take = chunk.shape[0] - pos
            bad = kernel(Z, chunk[pos:pos + take], params.theta, params.mu, params.a,
                         h_eff, coupled)
            if bad >= 0:
                raise SimulationError(done + bad)
            pos += take
            done += take
            if record_every and done % record_every == 0 and done < steps:
                times.append(done * h_eff)
                states.append(Z.copy())
    if steps:
        times.append(steps * h_eff)
        states.append(Z.copy())
    return times, states, h_eff


def _as_paths(z0, d):
    z0 = np.asarray(z0, dtype=float)
    if z0.ndim == 1:
        if z0.shape[0] != d:
            raise ValueError(f"z0 has length {z0.shape[0]}, expected {d}")
        return z0[None, :], True
    if z0.ndim == 2 and z0.shape[1] == d:
        return z0, False
    raise ValueError(f"z0 must have shape (d,) or (N, d) with d={d}")


def _single_increments(increments, single):
    if single and increments is not None:
        increments = np.asarray(increments, dtype=float)
        if increments.ndim == 2:
            increments = increments[:, None, :]
    return increments


def simulate_z_system(params: PearsonParams, z0, h, T, rng=None, *, increments=None,
                      record_every=1, backend=None) -> SdePath:
    """Coupled Euler-Maruyama for the rescaled system.

    ``z0`` is one state of length d or a batch ``(N, d)`` of independent
    paths.  ``increments`` (standard normals, shape ``(steps, N, d)``)
    overrides ``rng``.  ``record_every=None`` keeps only the endpoints.
    """
    Z0, single = _as_paths(z0, params.d)
    increments = _single_increments(increments, single)
    times, states, h_eff = _simulate(params, Z0, h, T, rng, True, increments,
                                     record_every, backend)
    st = np.array(states)
    if single:
        st = st[:, 0, :]
    return SdePath(np.array(times), st, h_eff, {"scheme": "euler-maruyama", "coupled": True})


def simulate_pearson_system(params: PearsonParams, z0, h, T, rng=None, *, increments=None,
                            record_every=1, backend=None) -> SdePath:
    """Independent Pearson diffusions, one per coordinate (same layout as above)."""
    Z0, single = _as_paths(z0, params.d)
    increments = _single_increments(increments, single)
    times, states, h_eff = _simulate(params, Z0, h, T, rng, False, increments,
                                     record_every, backend)
    st = np.array(states)
    if single:
        st = st[:, 0, :]
    return SdePath(np.array(times), st, h_eff, {"scheme": "euler-maruyama", "coupled": False})


def simulate_pearson(params: PearsonParams, z0, h, T, rng=None, *, increments=None,
                     record_every=1, backend=None) -> SdePath:
    """Scalar Pearson diffusion; ``z0`` is a scalar or a vector of N starts.

    Noise is consumed in the same layout as a one-coordinate
    :func:`simulate_z_system`, so the two agree path by path under one seed.
    """
    if params.d != 1:
        raise ValueError("simulate_pearson takes the parameters of a single coordinate")
    z0 = np.asarray(z0, dtype=float)
    scalar = z0.ndim == 0
    Z0 = z0.reshape(-1, 1)
    if increments is not None:
        increments = np.asarray(increments, dtype=float)
        increments = increments.reshape(increments.shape[0], Z0.shape[0], 1)
    times, states, h_eff = _simulate(params, Z0, h, T, rng, False, increments,
                                     record_every, backend)
    st = np.array(states)[:, :, 0]
    if scalar:
        st = st[:, 0]
    return SdePath(np.array(times), st, h_eff, {"scheme": "euler-maruyama", "coupled": False})


def hsgd_drift(ds: Dataset, cfg: OptimConfig, X):
    X = np.asarray(X, dtype=float)
    res = X @ ds.A.T - ds.b
    return -cfg.gamma * (res @ ds.A / ds.n + cfg.delta * X)


def simulate_hsgd(ds: Dataset, spec: Spectrum, cfg: OptimConfig, x0, h, T, rng=None, *,
                  increments=None, record_every=1, noise=True) -> SdePath:
    """Euler-Maruyama for homogenized SGD in the original coordinates.

    The diffusion matrix is ``gamma * sqrt(|Ax - b|^2 / (n^2 B)) * Q diag(sigma) Q^T``,
    the square root of ``gamma^2 (2 / (n^2 B)) L(x) A^T A``.  ``noise=False``
    gives the gradient flow.
    """
    X = np.array(x0, dtype=float, copy=True)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if single and increments is not None:
        increments = np.asarray(increments, dtype=float)
        if increments.ndim == 2:
            increments = increments[:, None, :]
    d, n, B = ds.d, ds.n, cfg.B
    root = (spec.Q * spec.sigma) @ spec.Q.T
    steps = _step_count(h, T)
    h_eff = T / steps if steps else h
    sh = math.sqrt(h_eff)
    times, states = [0.0], [X.copy()]
    chunks = _noise_chunks(rng, increments, steps, X.shape) if noise else None
    k = 0
    while k < steps:
        block = next(chunks) if noise else np.zeros((steps - k, *X.shape))
        for xi in block:
            res = X @ ds.A.T - ds.b
            r2 = np.maximum(np.einsum("pn,pn->p", res, res), 0.0)
            drift = -cfg.gamma * (res @ ds.A / n + cfg.delta * X)
            X = X + drift * h_eff
            if noise:
                amp = cfg.gamma * np.sqrt(r2 / (n * n * B)) * sh
                X = X + amp[:, None] * (xi @ root)
            if not np.isfinite(X).all():
                raise SimulationError(k)
            k += 1
            if record_every and k % record_every == 0 and k < steps:
                times.append(k * h_eff)
                states.append(X.copy())
    if steps:
        times.append(steps * h_eff)
        states.append(X.copy())
    st = np.array(states)
    if single:
        st = st[:, 0, :]
    return SdePath(np.array(times), st, h_eff, {"scheme": "euler-maruyama", "coords": "x"})


def transform_to_z(states, spec: Spectrum):
    """Map x-coordinates (any leading shape, last axis d) to rescaled Z."""
    X = np.asarray(getattr(states, "states", states), dtype=float)
    Y = (X - spec.x_star) @ spec.Q
    return Y * spec.sigma / math.sqrt(spec.beta)


def transform_from_z(Z, spec: Spectrum):
    Y = np.asarray(Z, dtype=float) * math.sqrt(spec.beta) / spec.sigma
    return Y @ spec.Q.T + spec.x_star


def pearson_stationary_logpdf(u, nu, mu=0.0):
    """Unnormalized log-density of the stationary Pearson type IV law.

    In the variable ``u = sqrt(nu) * (z - mu)``; for ``mu = 0`` this is the
    Student-t kernel with ``nu`` degrees of freedom.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    w = np.asarray(u, dtype=float) / math.sqrt(nu) + mu
    return -0.5 * (nu + 1.0) * np.log1p(w * w) + mu * (nu - 1.0) * np.arctan(w)


def to_stationary_variable(z, nu, mu=0.0):
    """``u = sqrt(nu) * (z - mu)``: the argument of :func:`pearson_stationary_logpdf`."""
    return math.sqrt(nu) * (np.asarray(z, dtype=float) - mu)


def moment_generator(params: PearsonParams, p):
    """Generator of the moment ODE ``m'(t) = G m(t)``, ``m_k = E[Z_t^k]``, k = 0..p."""
    if params.d != 1:
        raise ValueError("moment oracle is per coordinate")
    th, mu, a = float(params.theta[0]), float(params.mu[0]), float(params.a[0])
    g0, g1, g2, g3 = th * mu, th * a, -th, th * a
    G = np.zeros((p + 1, p + 1))
    for k in range(1, p + 1):
        G[k, k] = k * (g2 + (k - 1) * g3)
        G[k, k - 1] = k * g0
        if k >= 2:
            G[k, k - 2] = k * (k - 1) * g1
    return G


def pearson_moment_oracle(params: PearsonParams, z0, t, p):
    """Exact conditional moments ``E[Z_t^k | Z_0 = z0]`` for k = 0..p.

    Returns ``(moments, divergent)``; ``divergent[k]`` flags orders
    ``k >= nu`` whose values grow without bound as ``t`` increases.
    """
    if p < 0 or t < 0:
        raise ValueError("need p >= 0 and t >= 0")
    if p > MAX_MOMENT_ORDER:
        raise ValueError(f"moment order {p} exceeds {MAX_MOMENT_ORDER}")
    G = moment_generator(params, p)
    m0 = float(z0) ** np.arange(p + 1)
    moments = expm(t * G) @ m0
    divergent = np.arange(p + 1) >= float(params.nu[0])
    return moments, divergent


@dataclass
class ConvexOrderReport:
    coordinate: int
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    diff_se: float
    ordered: bool

    def as_dict(self):
        return dict(self.__dict__)


def convex_order_check(params: PearsonParams, z0, t, p=2, N=100_000, rng=None, *, h=None,
                       g=None, backend=None) -> list[ConvexOrderReport]:
    """Monte-Carlo comparison of E g(Z_t^i) (coupled) and E g(Zhat_t^i) (Pearson).

    Both systems start at ``z0`` and are driven by the same Brownian
    increments.  ``g`` defaults to ``|z|^p``.  A coordinate is reported as
    ordered when ``lhs >= rhs - 3 * SE`` with SE the standard error of the
    paired difference.
    """
    if g is None:
        if p < 1:
            raise ValueError("moment order must be >= 1")
        g = lambda z: np.abs(z) ** p  # noqa: E731
    rng = np.random.default_rng() if rng is None else rng
    h = default_step(params) if h is None else h
    d = params.d
    kernel = _backend.get("em_steps", backend)
    Z = np.tile(np.asarray(z0, dtype=float).reshape(1, d), (N, 1))
    Zh = Z.copy()
    steps = _step_count(h, t)
    h_eff = t / steps if steps else h
    done = 0
    for chunk in _noise_chunks(rng, None, steps, Z.shape):
        bad = kernel(Z, chunk, params.theta, params.mu, params.a, h_eff, True)
        bad_h = kernel(Zh, chunk, params.theta, params.mu, params.a, h_eff, False)
        if bad >= 0 or bad_h >= 0:
            raise SimulationError(done + max(bad, bad_h))
        done += chunk.shape[0]
    out = []
    for i in range(d):
        gl, gr = g(Z[:, i]), g(Zh[:, i])
        diff = gl - gr
        lhs, rhs = float(gl.mean()), float(gr.mean())
        se = float(diff.std(ddof=1) / math.sqrt(N))
        out.append(ConvexOrderReport(
            i, lhs, rhs,
            float(gl.std(ddof=1) / math.sqrt(N)), float(gr.std(ddof=1) / math.sqrt(N)),
            se, bool(lhs >= rhs - 3.0 * se),
        ))
    return out


def export_path(path: SdePath, fname):
    st = np.asarray(path.states)
    if st.ndim == 1:
        st = st[:, None]
    st = st.reshape(st.shape[0], -1)
    header = "t," + ",".join(f"z{i + 1}" for i in range(st.shape[1]))
    np.savetxt(fname, np.column_stack([path.times, st]), delimiter=",", header=header,
               comments="", fmt="%.17g")

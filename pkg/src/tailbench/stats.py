"""Empirical-distribution tools: CCDF, Student-t MLE, KS tests, alpha-stable.

Scaled Student-t means ``z = kappa * T`` with ``T ~ t(nu)``.  Stable laws use
the S1 parametrization (alpha, skew, scale, location).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special
from scipy.interpolate import RegularGridInterpolator

NU_BOUNDS = (0.5, 100.0)
KS_LEVEL = 0.05


class FitError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class FitResult:
    family: str
    params: dict
    loglik: float | None
    n_samples: int
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return {"family": self.family, "params": self.params, "loglik": self.loglik,
                "n": self.n_samples, "meta": self.meta}


@dataclass
class KsResult:
    statistic: float
    p_value: float
    variant: str
    n_effective: int
    decision_at_0_05: bool

    def to_json(self):
        return {"variant": self.variant, "D": self.statistic, "p": self.p_value,
                "n": self.n_effective,
                "decision": "reject" if self.decision_at_0_05 else "not reject"}


# -- empirical distribution --------------------------------------------------

def empirical_ccdf(samples):
    """Return ``(x, ccdf)`` at the distinct sorted sample values, ``ccdf = P(X > x)``."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("empirical_ccdf needs at least one sample")
    x, counts = np.unique(s, return_counts=True)
    ccdf = 1.0 - np.cumsum(counts) / s.size
    ccdf[-1] = 0.0
    return x, ccdf


def qq_points(samples, ppf, k=None):
    """Theoretical vs empirical quantiles at plotting positions (i - 0.5) / k."""
    s = np.asarray(samples, dtype=float).ravel()
    k = s.size if k is None else int(k)
    if not 1 <= k <= s.size:
        raise ValueError("k must be between 1 and the number of samples")
    pos = (np.arange(1, k + 1) - 0.5) / k
    return np.asarray(ppf(pos), dtype=float), np.quantile(s, pos, method="hazen")


# -- Student t ----------------------------------------------------------------

def t_cdf(x, nu, kappa=1.0):
    """CDF of ``kappa * t(nu)`` through the regularized incomplete beta function."""
    if not (nu > 0 and kappa > 0):
        raise ValueError("nu and kappa must be positive")
    t = np.asarray(x, dtype=float) / kappa
    tail = 0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + t * t))
    return np.where(t < 0, tail, 1.0 - tail)


def t_sf(x, nu, kappa=1.0):
    return t_cdf(-np.asarray(x, dtype=float), nu, kappa)


def t_ppf(p, nu, kappa=1.0):
    return kappa * special.stdtrit(nu, np.asarray(p, dtype=float))


def t_logpdf(x, nu, kappa=1.0):
    t = np.asarray(x, dtype=float) / kappa
    return (special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu)
            - 0.5 * math.log(nu * math.pi) - math.log(kappa)
            - 0.5 * (nu + 1) * np.log1p(t * t / nu))


def t_iqr(nu):
    return 2.0 * float(t_ppf(0.75, nu))


def t_loglik(z, nu, kappa):
    return float(np.sum(t_logpdf(z, nu, kappa)))


def _profile_kappa(z, nu, log_k0):
    res = optimize.minimize_scalar(
        lambda lk: -t_loglik(z, nu, math.exp(lk)),
        bounds=(log_k0 - 12.0, log_k0 + 6.0), method="bounded",
        options={"xatol": 1e-10, "maxiter": 500},
    )
    return math.exp(res.x), -res.fun


def fit_t_mle(samples, center=True, nu_bounds=NU_BOUNDS, grid=41):
    """Maximum-likelihood fit of ``kappa * t(nu)``.

    The scale is profiled out for each ``nu`` on a log grid over
    ``nu_bounds``; the best grid cell is then refined with Brent's method.
    """
    z = np.asarray(samples, dtype=float).ravel()
    z = z[np.isfinite(z)]
    if z.size < 50:
        raise ValueError(f"fit_t_mle needs at least 50 finite samples, got {z.size}")
    shift = float(z.mean()) if center else 0.0
    z = z - shift
    mad = float(np.median(np.abs(z - np.median(z))))
    spread = mad if mad > 0 else float(np.std(z))
    if not spread > 0:
        raise FitError("samples are constant")
    log_k0 = math.log(spread)
    lo, hi = math.log(nu_bounds[0]), math.log(nu_bounds[1])
    grid_nu = np.exp(np.linspace(lo, hi, grid))
    prof = [(_profile_kappa(z, nu, log_k0)[1], nu) for nu in grid_nu]
    j = int(np.argmax([p[0] for p in prof]))
    best = {"nu": float(grid_nu[j]), "loglik": float(prof[j][0])}
    a = math.log(grid_nu[max(j - 1, 0)])
    b = math.log(grid_nu[min(j + 1, grid - 1)])
    res = optimize.minimize_scalar(
        lambda lnu: -_profile_kappa(z, math.exp(lnu), log_k0)[1],
        bounds=(a, b), method="bounded", options={"xatol": 1e-8, "maxiter": 500},
    )
    if not res.success or not np.isfinite(res.fun):
        raise FitError("t-MLE refinement did not converge", best=best)
    nu = math.exp(res.x)
    ll_ref = -res.fun
    if ll_ref < best["loglik"]:
        nu, ll_ref = best["nu"], best["loglik"]
    kappa, ll = _profile_kappa(z, nu, log_k0)
    return FitResult(
        "scaled_t", {"nu": nu, "kappa": kappa}, ll, int(z.size),
        {"centered_by": shift, "nu_bounds": list(nu_bounds),
         "at_upper_bound": bool(nu >= 0.99 * nu_bounds[1])},
    )


# -- Kolmogorov-Smirnov --------------------------------------------------------

def kolmogorov_sf(lam, tol=1e-12):
    """Asymptotic P(sqrt(n) D > lam) for the two-sided statistic."""
    lam = float(lam)
    if lam <= 0:
        return 1.0
    if lam < 1.18:
        # Jacobi-theta form converges fast for small lam
        c = math.pi**2 / (8.0 * lam * lam)
        s, k = 0.0, 1
        while True:
            term = math.exp(-(2 * k - 1) ** 2 * c)
            s += term
            if term < tol or k > 1000:
                break
            k += 1
        p = 1.0 - math.sqrt(2.0 * math.pi) / lam * s
    else:
        s, k = 0.0, 1
        while True:
            term = math.exp(-2.0 * k * k * lam * lam)
            s += term if k % 2 else -term
            if term < tol or k > 1000:
                break
            k += 1
        p = 2.0 * s
    return min(1.0, max(0.0, p))


def _ks_sides(samples, cdf):
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    n = s.size
    u, counts = np.unique(s, return_counts=True)
    cum = np.cumsum(counts) / n
    prev = np.concatenate([[0.0], cum[:-1]])
    F = np.asarray(cdf(u), dtype=float)
    F_left = np.asarray(cdf(np.nextafter(u, -np.inf)), dtype=float)
    d_plus = max(0.0, float(np.max(cum - F)))
    d_minus = max(0.0, float(np.max(F_left - prev)))
    return d_plus, d_minus, n


def ks_test(samples, reference_cdf, variant="two_sided"):
    """One-sample Kolmogorov-Smirnov test against ``reference_cdf``.

    ``one_sided_geq`` tests H0: F_sample >= F_ref (statistic sup(F_ref - F_hat));
    ``one_sided_leq`` tests H0: F_sample <= F_ref (statistic sup(F_hat - F_ref)).
    One-sided p-values use exp(-2 n D^2); the two-sided one the Kolmogorov series.
    """
    s = np.asarray(samples, dtype=float).ravel()
    s = s[np.isfinite(s)]
    if s.size < 5:
        raise ValueError("ks_test needs at least 5 finite samples")
    d_plus, d_minus, n = _ks_sides(s, reference_cdf)
    if variant == "two_sided":
        D = max(d_plus, d_minus)
        p = kolmogorov_sf(math.sqrt(n) * D)
    elif variant == "one_sided_geq":
        D = d_minus
        p = math.exp(-2.0 * n * D * D)
    elif variant == "one_sided_leq":
        D = d_plus
        p = math.exp(-2.0 * n * D * D)
    else:
        raise ValueError(f"unknown KS variant {variant!r}")
    return KsResult(min(1.0, D), min(1.0, p), variant, n, bool(p < KS_LEVEL))


def ks_two_sample(x, y):
    x = np.sort(np.asarray(x, dtype=float).ravel())
    y = np.sort(np.asarray(y, dtype=float).ravel())
    allv = np.concatenate([x, y])
    fx = np.searchsorted(x, allv, side="right") / x.size
    fy = np.searchsorted(y, allv, side="right") / y.size
    D = float(np.max(np.abs(fx - fy)))
    ne = x.size * y.size / (x.size + y.size)
    p = kolmogorov_sf(math.sqrt(ne) * D)
    return KsResult(D, p, "two_sample", int(round(ne)), bool(p < KS_LEVEL))


# -- alpha-stable --------------------------------------------------------------

def stable_sample_cms(alpha, skew, scale, location, n, rng):
    """Chambers-Mallows-Stuck draws from S1(alpha, skew, scale, location)."""
    if not (0 < alpha <= 2):
        raise ValueError("alpha must lie in (0, 2]")
    if not -1 <= skew <= 1:
        raise ValueError("skew must lie in [-1, 1]")
    if not scale > 0:
        raise ValueError("scale must be positive")
    V = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, size=n)
    W = rng.standard_exponential(size=n)
    if alpha == 1.0:
        hb = 0.5 * math.pi + skew * V
        X = (2.0 / math.pi) * (hb * np.tan(V)
                               - skew * np.log(0.5 * math.pi * W * np.cos(V) / hb))
        return scale * X + (2.0 / math.pi) * skew * scale * math.log(scale) + location
    if alpha == 2.0:
        X = 2.0 * np.sqrt(W) * np.sin(V)
        return scale * X + location
    zeta = skew * math.tan(0.5 * math.pi * alpha)
    B = math.atan(zeta) / alpha
    S = (1.0 + zeta * zeta) ** (0.5 / alpha)
    X = (S * np.sin(alpha * (V + B)) / np.cos(V) ** (1.0 / alpha)
         * (np.cos(V - alpha * (V + B)) / W) ** ((1.0 - alpha) / alpha))
    return scale * X + location


# McCulloch (1986) quantile tables
_NU_ALPHA = [2.439, 2.5, 2.6, 2.7, 2.8, 3.0, 3.2, 3.5, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 25.0]
_NU_BETA = [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0]
_PSI1 = np.array([
    [2.000, 2.000, 2.000, 2.000, 2.000, 2.000, 2.000],
    [1.916, 1.924, 1.924, 1.924, 1.924, 1.924, 1.924],
    [1.808, 1.813, 1.829, 1.829, 1.829, 1.829, 1.829],
    [1.729, 1.730, 1.737, 1.745, 1.745, 1.745, 1.745],
    [1.664, 1.663, 1.663, 1.668, 1.676, 1.676, 1.676],
    [1.563, 1.560, 1.553, 1.548, 1.547, 1.547, 1.547],
    [1.484, 1.480, 1.471, 1.460, 1.448, 1.438, 1.438],
    [1.391, 1.386, 1.378, 1.364, 1.337, 1.318, 1.318],
    [1.279, 1.273, 1.266, 1.250, 1.210, 1.184, 1.150],
    [1.128, 1.121, 1.114, 1.101, 1.067, 1.027, 0.973],
    [1.029, 1.021, 1.014, 1.004, 0.974, 0.935, 0.874],
    [0.896, 0.892, 0.884, 0.883, 0.855, 0.823, 0.769],
    [0.818, 0.812, 0.806, 0.801, 0.780, 0.756, 0.691],
    [0.698, 0.695, 0.692, 0.689, 0.676, 0.656, 0.597],
    [0.593, 0.590, 0.588, 0.586, 0.579, 0.563, 0.513]])
_PSI2 = np.array([
    [0, 2.160, 1.000, 1.000, 1.000, 1.000, 1.000],
    [0, 1.592, 3.390, 1.000, 1.000, 1.000, 1.000],
    [0, 0.759, 1.800, 1.000, 1.000, 1.000, 1.000],
    [0, 0.482, 1.048, 1.694, 1.000, 1.000, 1.000],
    [0, 0.360, 0.760, 1.232, 2.229, 1.000, 1.000],
    [0, 0.253, 0.518, 0.823, 1.575, 1.000, 1.000],
    [0, 0.203, 0.410, 0.632, 1.244, 1.906, 1.000],
    [0, 0.165, 0.332, 0.499, 0.943, 1.560, 1.000],
    [0, 0.136, 0.271, 0.404, 0.689, 1.230, 2.195],
    [0, 0.109, 0.216, 0.323, 0.539, 0.827, 1.917],
    [0, 0.096, 0.190, 0.284, 0.472, 0.693, 1.759],
    [0, 0.082, 0.163, 0.243, 0.412, 0.601, 1.596],
    [0, 0.074, 0.147, 0.220, 0.377, 0.546, 1.482],
    [0, 0.064, 0.128, 0.191, 0.330, 0.478, 1.362],
    [0, 0.056, 0.112, 0.167, 0.285, 0.428, 1.274]])
_ALPHA_GRID = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0]
_BETA_GRID = [0.0, 0.25, 0.5, 0.75, 1.0]
# rows in ascending alpha
_PHI3 = np.array([
    [2.588, 3.073, 4.534, 6.636, 9.144],
    [2.337, 2.634, 3.542, 4.808, 6.247],
    [2.189, 2.392, 3.004, 3.844, 4.775],
    [2.098, 2.244, 2.676, 3.265, 3.912],
    [2.040, 2.149, 2.461, 2.886, 3.356],
    [2.000, 2.085, 2.311, 2.624, 2.973],
    [1.980, 2.040, 2.205, 2.435, 2.696],
    [1.965, 2.007, 2.125, 2.294, 2.491],
    [1.955, 1.984, 2.067, 2.188, 2.333],
    [1.946, 1.967, 2.022, 2.106, 2.211],
    [1.939, 1.952, 1.988, 2.045, 2.116],
    [1.933, 1.940, 1.962, 1.997, 2.043],
    [1.927, 1.930, 1.943, 1.961, 1.987],
    [1.921, 1.922, 1.927, 1.936, 1.947],
    [1.914, 1.915, 1.916, 1.918, 1.921],
    [1.908, 1.908, 1.908, 1.908, 1.908]])
_PHI5 = np.array([
    [0, -0.061, -0.279, -0.659, -1.198],
    [0, -0.078, -0.272, -0.581, -0.997],
    [0, -0.089, -0.262, -0.520, -0.853],
    [0, -0.096, -0.250, -0.469, -0.742],
    [0, -0.099, -0.237, -0.424, -0.652],
    [0, -0.098, -0.223, -0.380, -0.576],
    [0, -0.095, -0.208, -0.346, -0.508],
    [0, -0.090, -0.192, -0.310, -0.447],
    [0, -0.084, -0.173, -0.276, -0.390],
    [0, -0.075, -0.154, -0.241, -0.335],
    [0, -0.066, -0.134, -0.206, -0.283],
    [0, -0.056, -0.111, -0.170, -0.232],
    [0, -0.043, -0.088, -0.132, -0.179],
    [0, -0.030, -0.061, -0.092, -0.123],
    [0, -0.017, -0.032, -0.049, -0.064],
    [0, 0.000, 0.000, 0.000, 0.000]])


def _bilinear(xg, yg, table):
    interp = RegularGridInterpolator((xg, yg), table, method="linear")

    def f(x, y):
        x = min(max(x, xg[0]), xg[-1])
        y = min(max(y, yg[0]), yg[-1])
        return float(interp([[x, y]])[0])
    return f


_psi1 = _bilinear(_NU_ALPHA, _NU_BETA, _PSI1)
_psi2 = _bilinear(_NU_ALPHA, _NU_BETA, _PSI2)
_phi3 = _bilinear(_ALPHA_GRID, _BETA_GRID, _PHI3)
_phi5 = _bilinear(_ALPHA_GRID, _BETA_GRID, _PHI5)

ALPHA_CLAMP = (0.6, 2.0)


def fit_stable_quantile(samples):
    """McCulloch quantile estimator from the 5/25/50/75/95 % sample quantiles."""
    x = np.asarray(samples, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size < 100:
        raise ValueError("fit_stable_quantile needs at least 100 samples")
    q05, q25, q50, q75, q95 = np.percentile(x, [5, 25, 50, 75, 95])
    iqr = q75 - q25
    if not iqr > 0 or not q95 > q05:
        raise FitError("degenerate sample quantiles (zero interquartile range)")
    nu_a = (q95 - q05) / iqr
    nu_b = (q95 + q05 - 2.0 * q50) / (q95 - q05)
    sgn = 1.0 if nu_b >= 0 else -1.0
    if nu_a < _NU_ALPHA[0]:
        alpha, skew = 2.0, 0.0
    else:
        alpha = _psi1(nu_a, abs(nu_b))
        skew = sgn * min(1.0, _psi2(nu_a, abs(nu_b)))
    alpha = min(max(alpha, ALPHA_CLAMP[0]), ALPHA_CLAMP[1])
    sb = 1.0 if skew >= 0 else -1.0
    scale = iqr / _phi3(alpha, abs(skew))
    zeta = q50 + scale * sb * _phi5(alpha, abs(skew))
    if alpha != 1.0:
        loc = zeta - skew * scale * math.tan(0.5 * math.pi * alpha)
    else:
        loc = zeta
    return FitResult(
        "alpha_stable",
        {"alpha": float(alpha), "skew": float(skew), "scale": float(scale), "location": float(loc)},
        None, int(x.size), {"method": "mcculloch-quantile", "nu_alpha": float(nu_a),
                            "nu_beta": float(nu_b)},
    )


@lru_cache(maxsize=16)
def _stable_reference(alpha, skew, scale, location, n, seed):
    rng = np.random.default_rng(seed)
    s = np.sort(stable_sample_cms(alpha, skew, scale, location, n, rng))
    s.setflags(write=False)
    return s


def stable_reference(params, n=1_000_000, seed=20240229):
    """Sorted Monte-Carlo sample from a stable law (cached); gives cdf/ppf."""
    key = tuple(round(float(params[k]), 12) for k in ("alpha", "skew", "scale", "location"))
    s = _stable_reference(*key, n, seed)

    def cdf(x):
        return np.searchsorted(s, np.asarray(x, dtype=float), side="right") / s.size

    def ppf(p):
        return np.quantile(s, np.asarray(p, dtype=float))

    return cdf, ppf

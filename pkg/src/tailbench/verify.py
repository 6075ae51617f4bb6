"""Self-checks of the library's invariants, grouped in a fast and a full level.

Every check returns a :class:`Check` with ``measured`` and ``tolerance`` so
reports are machine readable.  The full level adds the Monte-Carlo checks
and the end-to-end experiment criteria.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _backend, stats, tails
from .dataio import Dataset, gen_gaussian_synthetic, make_dataset, spectral
from .diffusion import (PearsonParams, build_pearson_params, convex_order_check,
                        pearson_moment_oracle, simulate_hsgd, simulate_pearson,
                        simulate_z_system, transform_to_z)
from .sgd import OptimConfig, gradient_noise_covariance


@dataclass
class Check:
    name: str
    status: str              # pass | fail | error
    measured: object
    tolerance: object
    detail: str = ""
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def line(self) -> str:
        return (f"[{self.status.upper():5s}] {self.name}: measured={_short(self.measured)} "
                f"tolerance={_short(self.tolerance)}" + (f" ({self.detail})" if self.detail else ""))


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)) and len(v) > 6:
        return f"[{len(v)} values]"
    return str(v)


def _result(name, ok, measured, tolerance, detail=""):
    return Check(name, "pass" if ok else "fail", measured, tolerance, detail)


# -- closed-form identities -----------------------------------------------------------

def check_bound_formula():
    """Upper bound from the tabulated (n, B, delta, gamma, lambda_1) of three runs."""
    rows = [(2000, 1, 0.0, 0.015, 319.83, 3.61), (1797, 1, 0.0, 0.100, 137.07, 2.91),
            (1797, 1, 0.0, 0.200, 93.49, 3.06)]
    errs = [abs(tails.eta_upper(n, B, dl, g, l1) - ref) for n, B, dl, g, l1, ref in rows]
    return _result("bound_formula", max(errs) <= 0.01, max(errs), 0.01)


def check_gap_identity(trials=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 40))
        lam = np.sort(rng.uniform(0.1, 50.0, d))[::-1]
        n, B = int(rng.integers(d + 1, 5000)), int(rng.integers(1, 8))
        g, dl = rng.uniform(1e-3, 0.5), rng.choice([0.0, rng.uniform(0, 0.1)])
        gap = tails.eta_upper(n, B, dl, g, lam[0]) - tails.eta_lower(n, B, dl, g, lam)
        ref = float(np.sum(lam[1:] ** 2)) / lam[0] ** 2
        worst = max(worst, abs(gap - ref))
    return _result("gap_identity", worst <= 1e-12, worst, 1e-12, f"{trials} random spectra")


def enumerated_noise_covariance(A, b, x, B):
    """Covariance of the minibatch gradient by enumerating all n^B ordered batches."""
    n, d = A.shape
    res = A @ x - b
    G = A * res[:, None]
    full = G.mean(axis=0)
    C = np.zeros((d, d))
    for batch in itertools.product(range(n), repeat=B):
        g = G[list(batch)].mean(axis=0) - full
        C += np.outer(g, g)
    return C / n**B


def check_covariance_oracle(seed=0):
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for n in range(1, 5):
        for d in range(1, 4):
            for B in range(1, 4):
                A = rng.standard_normal((n, d))
                b = rng.standard_normal(n)
                x = rng.standard_normal(d)
                ds = Dataset(A, b)
                C = gradient_noise_covariance(ds, x, B)
                E = enumerated_noise_covariance(A, b, x, B)
                worst = max(worst, float(np.max(np.abs(C - E))))
                count += 1
    return _result("covariance_oracle", worst <= 1e-12, worst, 1e-12, f"{count} instances")


def check_drift_condition(trials=50, seed=0):
    rng = np.random.default_rng(seed)
    worst_q, worst_inf, used = 0.0, math.inf, 0
    for _ in range(trials):
        d = int(rng.integers(2, 30))
        n = int(rng.integers(d + 10, 3000))
        B = int(rng.integers(1, 5))
        dl = float(rng.choice([0.0, rng.uniform(0, 0.05)]))
        lam = np.sort(rng.uniform(0.5, 40.0, d))[::-1]
        gb = tails.gamma_bar(n, B, dl, lam)
        g = float(rng.uniform(0.05, 0.95) * gb)
        th = tails.vartheta(n, B, dl, g, lam)
        tr = float(np.sum(lam**2))
        q = float(tails.q_value(lam[0] ** 2, th, n, B, dl, g, tr))
        scale = 2.0 * n * B * (lam[0] ** 2 + n * dl) / g
        worst_q = max(worst_q, abs(q) / scale)
        if th - 0.05 >= 2.0:
            for rho in np.linspace(2.0, th - 0.05, 25):
                m = tails.drift_condition_margin(lam, n, B, dl, g, rho)
                worst_inf = min(worst_inf, m.inf_q)
            used += 1
    ok = worst_q <= 1e-9 and worst_inf > 0
    return _result("drift_condition", ok, {"q_at_vartheta_rel": worst_q, "min_inf_q": worst_inf},
                   {"q_at_vartheta_rel": 1e-9, "min_inf_q": "> 0"},
                   f"{trials} instances, {used} with a non-empty rho grid")


def check_vartheta_identity(trials=100, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 30))
        lam = np.sort(rng.uniform(0.1, 30.0, d))[::-1]
        n, B, g = int(rng.integers(d + 1, 4000)), int(rng.integers(1, 6)), rng.uniform(1e-3, 0.3)
        worst = max(worst, abs(tails.vartheta(n, B, 0.0, g, lam) - tails.eta_lower(n, B, 0.0, g, lam)))
    return _result("vartheta_equals_eta_lower", worst <= 1e-9, worst, 1e-9)


def check_t_cdf():
    xs = np.linspace(-50, 50, 2001)
    sym = max(float(np.max(np.abs(stats.t_cdf(xs, nu, 1.3) + stats.t_cdf(-xs, nu, 1.3) - 1)))
              for nu in (0.7, 1.0, 3.0, 30.0))
    cauchy = abs(float(stats.t_cdf(1.0, 1.0)) - 0.75)
    worst = max(sym, cauchy)
    return _result("t_cdf_symmetry", worst <= 1e-10, worst, 1e-10)


def check_ks_self():
    rng = np.random.default_rng(3)
    s = rng.standard_normal(500)
    srt = np.sort(s)
    r = stats.ks_test(s, lambda x: np.searchsorted(srt, x, side="right") / srt.size)
    return _result("ks_self_identity", r.statistic == 0.0 and r.p_value == 1.0,
                   {"D": r.statistic, "p": r.p_value}, {"D": 0.0, "p": 1.0})


def check_moment_oracle_closed_form():
    """First two oracle moments against the solved linear moment ODE."""
    worst = 0.0
    for th, mu, a, z0, t in [(1.0, 0.3, 0.2, 1.5, 0.7), (0.4, -0.5, 0.1, -2.0, 3.0),
                             (2.0, 0.0, 0.05, 0.2, 1.1)]:
        P = PearsonParams(th, mu, a)
        m, _ = pearson_moment_oracle(P, z0, t, 2)
        m1 = mu + (z0 - mu) * math.exp(-th * t)
        # m2' = c2 m2 + 2 th mu m1 + 2 th a  with c2 = -2 th + 2 th a
        c2 = -2 * th + 2 * th * a
        e1, e2 = math.exp(-th * t), math.exp(c2 * t)
        # particular solution for the constant and the exp(-th t) forcing terms
        k0 = 2 * th * mu * mu + 2 * th * a
        k1 = 2 * th * mu * (z0 - mu)
        m2 = -k0 / c2 * (1 - e2) + k1 * (e1 - e2) / (-th - c2) + z0 * z0 * e2
        worst = max(worst, abs(m[1] - m1), abs(m[2] - m2) / max(1.0, abs(m2)))
    return _result("moment_oracle_closed_form", worst <= 1e-10, worst, 1e-10)


def check_hsgd_z_equivalence(seed=5):
    """hSGD in x-coordinates maps exactly onto the rescaled coupled system."""
    X, b = gen_gaussian_synthetic(60, 4, seed)
    ds = make_dataset(X, b)
    cfg = OptimConfig(gamma=0.05, delta=0.01, B=2)
    spec = spectral(ds, cfg.delta)
    params = build_pearson_params(spec, cfg)
    rng = np.random.default_rng(seed)
    steps, h = 200, 0.05
    xi = rng.standard_normal((steps, 3, ds.d))
    x0 = spec.x_star + rng.standard_normal((3, ds.d))
    px = simulate_hsgd(ds, spec, cfg, x0, h, steps * h, increments=xi, record_every=None)
    pz = simulate_z_system(params, transform_to_z(x0, spec), h, steps * h,
                           increments=xi @ spec.Q, record_every=None)
    err = float(np.max(np.abs(transform_to_z(px.states[-1], spec) - pz.states[-1])))
    return _result("hsgd_to_z_equivalence", err <= 1e-8, err, 1e-8)


def check_backend_agreement(seed=2):
    if _backend.BACKEND != "cython":
        return Check("backend_agreement", "pass", "skipped", 1e-10, "compiled kernels not built")
    from . import _fallback, _kernels
    rng = np.random.default_rng(seed)
    A, bv = rng.uniform(size=(50, 6)), rng.standard_normal(50)
    X = rng.standard_normal((5, 6))
    idx = rng.integers(0, 50, size=(5, 100, 3)).astype(np.int64)
    X1, X2 = X.copy(), X.copy()
    _kernels.sgd_block(A, bv, X1, idx, 0.05, 0.01, math.inf)
    _fallback.sgd_block(A, bv, X2, idx, 0.05, 0.01, math.inf)
    e1 = float(np.max(np.abs(X1 - X2)))
    th, mu, a = np.array([1.0, 0.5]), np.array([0.1, 0.0]), np.array([0.2, 0.1])
    Z = rng.standard_normal((7, 2))
    dW = rng.standard_normal((300, 7, 2))
    err = e1
    for coupled in (True, False):
        Z1, Z2 = Z.copy(), Z.copy()
        _kernels.em_steps(Z1, dW, th, mu, a, 0.01, coupled)
        _fallback.em_steps(Z2, dW, th, mu, a, 0.01, coupled)
        err = max(err, float(np.max(np.abs(Z1 - Z2))))
    return _result("backend_agreement", err <= 1e-10, err, 1e-10)


# -- Monte-Carlo checks -------------------------------------------------------------

def check_pearson_stationary(N=50_000, T=25.0, h=0.005, seed=11):
    """Long-run variance of the centred Pearson diffusion with nu = 6 and its mean decay."""
    nu, theta, z0 = 6.0, 1.0, 2.0
    P = PearsonParams.from_nu(theta, nu, 0.0)
    rng = np.random.default_rng(seed)
    horizons = (0.5, 1.0, 2.0)
    steps_rec = [int(round(t / h)) for t in horizons]
    path = simulate_pearson(P, np.full(N, z0), h, T, rng, record_every=steps_rec[0])
    var_u = float(np.var(path.states[-1]) * nu)
    target = nu / (nu - 2)
    rel = abs(var_u - target) / target
    worst_z = 0.0
    for t in horizons:
        k = int(np.argmin(np.abs(path.times - t)))
        zt = path.states[k]
        se = float(zt.std(ddof=1) / math.sqrt(N))
        worst_z = max(worst_z, abs(float(zt.mean()) - z0 * math.exp(-theta * path.times[k])) / se)
    ok = rel <= 0.05 and worst_z <= 4.0
    return _result("pearson_stationary_moments", ok,
                   {"var_u": var_u, "rel_err": rel, "max_mean_z": worst_z},
                   {"rel_err": 0.05, "max_mean_z": 4.0},
                   "variance in u = sqrt(nu) * z, target nu/(nu-2) = 1.5")


def check_moment_oracle_mc(N=100_000, h=0.002, seed=13, nus=(5.0, 8.0, 12.0),
                           horizons=(0.25, 1.0, 3.0)):
    theta, mu, z0 = 1.0, 0.3, 1.0
    worst = 0.0
    rng = np.random.default_rng(seed)
    for nu in nus:
        P = PearsonParams.from_nu(theta, nu, mu)
        every = int(round(horizons[0] / h))
        path = simulate_pearson(P, np.full(N, z0), h, max(horizons), rng, record_every=every)
        for t in horizons:
            k = int(np.argmin(np.abs(path.times - t)))
            zt = path.states[k]
            m, _ = pearson_moment_oracle(P, z0, float(path.times[k]), 2)
            for p in (1, 2):
                s = zt**p
                se = float(s.std(ddof=1) / math.sqrt(N))
                worst = max(worst, abs(float(s.mean()) - m[p]) / se)
    return _result("moment_oracle_monte_carlo", worst <= 4.0, worst, 4.0,
                   f"{len(nus) * len(horizons)} (t, nu) combinations, max |error| in SE units")


def check_convex_order(N=100_000, horizons=(1.0, 3.0), seed=17):
    P = PearsonParams(np.array([1.0, 0.5, 0.25]), np.array([0.2, -0.1, 0.0]),
                      1.0 / (np.array([8.0, 10.0, 12.0]) - 1.0))
    z0 = np.array([0.5, -0.5, 1.0])
    worst, fails = math.inf, 0
    for t in horizons:
        for p in (1, 2, 3):
            rep = convex_order_check(P, z0, t, p=p, N=N, rng=np.random.default_rng(seed))
            for r in rep:
                margin = (r.lhs - r.rhs) / r.diff_se if r.diff_se > 0 else math.inf
                worst = min(worst, margin)
                fails += not r.ordered
    return _result("convex_order", fails == 0, worst, -3.0,
                   "min (E|Z|^p - E|Zhat|^p) / SE over p, coordinates and horizons")


def check_wishart(n=400, d=40, draws=50, seed=19):
    rng = np.random.default_rng(seed)
    tops = [np.linalg.eigvalsh(G.T @ G)[-1]
            for G in (rng.standard_normal((n, d)) for _ in range(draws))]
    ref = tails.wishart_expected_lambda1sq(n, d)
    rel = abs(float(np.mean(tops)) - ref) / ref
    return _result("wishart_top_eigenvalue", rel <= 0.03, rel, 0.03)


def check_estimators(seed=23):
    rng = np.random.default_rng(seed)
    z = 2.0 * rng.standard_t(5.0, 100_000)
    f = stats.fit_t_mle(z)
    e_nu = abs(f.params["nu"] - 5.0) / 5.0
    e_k = abs(f.params["kappa"] - 2.0) / 2.0
    s = stats.stable_sample_cms(1.5, 0.0, 1.0, 0.0, 100_000, rng)
    e_a = abs(stats.fit_stable_quantile(s).params["alpha"] - 1.5)
    ok = e_nu <= 0.1 and e_k <= 0.1 and e_a <= 0.1
    return _result("estimator_self_consistency", ok,
                   {"nu_rel": e_nu, "kappa_rel": e_k, "alpha_abs": e_a},
                   {"nu_rel": 0.1, "kappa_rel": 0.1, "alpha_abs": 0.1})


# -- end-to-end experiment criteria -----------------------------------------------

def reference_config(seed, replicas=1000, output_dir="tailbench-reference"):
    from .experiment import ExperimentConfig
    return ExperimentConfig.from_dict({
        "name": f"reference_seed{seed}", "seed": seed, "output_dir": output_dir,
        "dataset": {"kind": "synthetic", "n": 2000, "d": 200},
        "optim": {"gamma": 0.015, "delta": 0.0, "B": 1, "K": 1000},
        "analysis": {"replicas": replicas, "fit_families": ["t"]},
    })


def sandwich_outcome(res):
    b, ft, ks = res["bounds"], res["fit_t"], res["ks"]
    nu = ft["nu"]
    in_band = b["eta_lower"] - 0.5 <= nu <= b["eta_upper"] + 0.5
    not_rej = (ks["upper_bound"]["decision"] == "not reject"
               and ks["lower_bound"]["decision"] == "not reject")
    return {"nu_hat": nu, "eta_lower": b["eta_lower"], "eta_upper": b["eta_upper"],
            "in_band": in_band, "ks_not_rejected": not_rej, "ok": in_band and not_rej}


def check_sandwich(workdir, seeds=range(1, 11), replicas=1000):
    from .experiment import run_experiment
    from pathlib import Path
    outcomes = []
    for s in seeds:
        res = run_experiment(reference_config(s, replicas), Path(workdir) / f"seed{s}")
        outcomes.append(sandwich_outcome(res))
    hits = sum(o["ok"] for o in outcomes)
    nus = [round(o["nu_hat"], 2) for o in outcomes]
    return _result("end_to_end_sandwich", hits >= 8, {"seeds_ok": hits, "nu_hat": nus},
                   {"seeds_ok": ">= 8 of 10"},
                   f"band hits {sum(o['in_band'] for o in outcomes)}, "
                   f"KS non-rejections {sum(o['ks_not_rejected'] for o in outcomes)}")


def sweep_config(parameter, values, output_dir, gamma, seed=1, replicas=1000):
    from .experiment import ExperimentConfig
    return ExperimentConfig.from_dict({
        "name": f"sweep_{parameter}", "seed": seed, "output_dir": str(output_dir),
        "dataset": {"kind": "synthetic", "n": 2000, "d": 200},
        "optim": {"gamma": gamma, "delta": 0.0, "B": 1, "K": 1000},
        "analysis": {"replicas": replicas, "fit_families": ["t"]},
        "sweep": {"parameter": parameter, "values": list(values)},
    })


GAMMA_SWEEP = (0.010, 0.015, 0.020, 0.025)
B_SWEEP = (1, 2, 3, 4)
D_SWEEP = (100, 140, 180, 220, 260)


def check_monotonicity(workdir, replicas=1000):
    from pathlib import Path
    from .experiment import run_sweep
    root = Path(workdir)
    g = run_sweep(sweep_config("gamma", GAMMA_SWEEP, root / "gamma", 0.015, replicas=replicas))
    bs = run_sweep(sweep_config("B", B_SWEEP, root / "B", 0.015, replicas=replicas))
    ds = run_sweep(sweep_config("d", D_SWEEP, root / "d", 0.02, replicas=replicas))
    eg = [r[3] for r in g["rows"]]
    eb = [r[3] for r in bs["rows"]]
    ld, ed = [r[1] for r in ds["rows"]], [r[3] for r in ds["rows"]]
    qg, qb = [r[5] for r in g["rows"]], [r[5] for r in bs["rows"]]
    dec = lambda v: all(a > b for a, b in zip(v, v[1:]))  # noqa: E731
    inc = lambda v: all(a < b for a, b in zip(v, v[1:]))  # noqa: E731
    parts = {"gamma_eta_decreasing": dec(eg), "B_eta_increasing": inc(eb),
             "d_lambda1_increasing": inc(ld), "d_eta_decreasing": dec(ed),
             "gamma_q99_dominance": qg[-1] > qg[0], "B_q99_dominance": qb[0] > qb[-1]}
    return _result("monotonicity_sweeps", all(parts.values()), parts, "all true",
                   f"q99 |z|: gamma {qg[0]:.3g}->{qg[-1]:.3g}, B {qb[0]:.3g}->{qb[-1]:.3g}")


FAST = [check_bound_formula, check_gap_identity, check_covariance_oracle, check_drift_condition,
        check_vartheta_identity, check_t_cdf, check_ks_self, check_moment_oracle_closed_form,
        check_hsgd_z_equivalence, check_backend_agreement, check_wishart]


def _fast_convex_order():
    c = check_convex_order(N=10_000, horizons=(1.0,))
    c.name = "convex_order_small"
    return c


def _fast_estimators():
    rng = np.random.default_rng(29)
    f = stats.fit_t_mle(2.0 * rng.standard_t(5.0, 20_000))
    e = abs(f.params["nu"] - 5.0) / 5.0
    return _result("t_mle_small", e <= 0.15, e, 0.15)


FAST_EXTRA = [_fast_convex_order, _fast_estimators]
FULL = [check_pearson_stationary, check_moment_oracle_mc, check_convex_order, check_estimators]


def verify_suite(level="fast", workdir=None) -> list[Check]:
    """Run the checks of ``level`` ("fast" or "full"); failures become entries."""
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    funcs = FAST + (FAST_EXTRA if level == "fast" else FULL)
    out = []
    for fn in funcs:
        out.append(_timed(fn))
    if level == "full":
        import tempfile
        with tempfile.TemporaryDirectory() as tmp:
            out.append(_timed(lambda: check_sandwich(tmp)))
            out.append(_timed(lambda: check_monotonicity(tmp)))
    return out


def _timed(fn):
    t0 = time.perf_counter()
    try:
        c = fn()
    except Exception as exc:  # noqa: BLE001
        name = getattr(fn, "__name__", "check").removeprefix("check_")
        c = Check(name, "error", None, None, f"{type(exc).__name__}: {exc}")
    c.seconds = round(time.perf_counter() - t0, 3)
    return c


def report_json(checks) -> dict:
    rows = []
    for c in checks:
        d = asdict(c)
        d.pop("seconds")
        rows.append(d)
    return {"checks": rows, "passed": sum(c.passed for c in checks), "total": len(checks)}

"""Config-driven experiment pipeline: data, bounds, ensemble, fits, KS, plots.

A run writes a flat directory of artifacts through a :class:`Collector`,
which writes each file atomically and records its sha256 in
``manifest.json``.  Nothing time-dependent is written, so identical
configs give byte-identical artifacts.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, _backend, plots, stats, tails
from .dataio import (gen_gaussian_synthetic, load_csv, make_dataset, random_features,
                     spectral, RELU_SCALE)
from .sgd import InitSampler, OptimConfig, replica_seed, run_ensemble

SWEEP_PARAMETERS = ("gamma", "B", "d")
MIN_FIT_SAMPLES = {"t": 50, "stable": 100, "ks": 5}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# -- configuration --------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"            # synthetic | csv
    n: int = 2000
    d: int = 200
    seed: int | None = None
    path: str | None = None
    response_column: int = -1
    features: int | None = None        # random-feature dimension (csv only)
    feature_seed: int | None = None
    relu_scale: float = RELU_SCALE
    scale_response: bool = False
    drop_constant_columns: bool = False


@dataclass(frozen=True)
class AnalysisSpec:
    replicas: int = 1000
    fit_families: tuple = ("t", "stable")
    init: dict = field(default_factory=lambda: {"kind": "normal", "scale": 1.0})
    dynamics: str = "sgd"              # sgd | hsgd
    hsgd_step: float = 1.0
    guard: float | None = None
    qq_points: int = 1000


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    optim: OptimConfig
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    output_dir: str = "tailbench-out"
    seed: int = 0
    name: str = "experiment"
    sweep: SweepSpec | None = None

    @property
    def data_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "dataset": asdict(self.dataset),
            "optim": {k: v for k, v in asdict(self.optim).items()
                      if k not in ("seed", "replicas")},
            "analysis": {**asdict(self.analysis), "fit_families": list(self.analysis.fit_families)},
        }
        if self.sweep is not None:
            out["sweep"] = {"parameter": self.sweep.parameter, "values": list(self.sweep.values)}
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {"name", "seed", "output_dir", "dataset", "optim", "analysis", "sweep"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            seed = int(raw.get("seed", 0))
            ds = DatasetSpec(**raw.get("dataset", {}))
            an_raw = dict(raw.get("analysis", {}))
            if "fit_families" in an_raw:
                an_raw["fit_families"] = tuple(an_raw["fit_families"])
            an = AnalysisSpec(**an_raw)
            opt_raw = dict(raw.get("optim", {}))
            if "gamma" not in opt_raw:
                raise ConfigError("optim.gamma is required")
            opt = OptimConfig(seed=seed, replicas=an.replicas, **opt_raw)
            sw = raw.get("sweep")
            sweep = None if sw is None else SweepSpec(sw.get("parameter"), tuple(sw.get("values", ())))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(ds, opt, an, str(raw.get("output_dir", "tailbench-out")), seed,
                  str(raw.get("name", "experiment")), sweep)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        ds, an = self.dataset, self.analysis
        if ds.kind not in ("synthetic", "csv"):
            raise ConfigError(f"dataset.kind must be 'synthetic' or 'csv', got {ds.kind!r}")
        if ds.kind == "synthetic" and not (ds.n >= 2 and ds.d >= 1):
            raise ConfigError("synthetic data needs n >= 2 and d >= 1")
        if ds.kind == "csv" and not ds.path:
            raise ConfigError("dataset.path is required for csv data")
        if ds.features is not None and ds.features < 1:
            raise ConfigError("dataset.features must be >= 1")
        if an.replicas < 1:
            raise ConfigError("analysis.replicas must be >= 1")
        bad = set(an.fit_families) - {"t", "stable"}
        if bad:
            raise ConfigError(f"unknown fit families {sorted(bad)}")
        if an.dynamics not in ("sgd", "hsgd"):
            raise ConfigError("analysis.dynamics must be 'sgd' or 'hsgd'")
        if not an.hsgd_step > 0:
            raise ConfigError("analysis.hsgd_step must be positive")
        if an.qq_points < 1:
            raise ConfigError("analysis.qq_points must be >= 1")
        try:
            InitSampler.from_dict(an.init)
        except TypeError as exc:
            raise ConfigError(f"bad init sampler: {exc}") from exc
        if self.sweep is not None:
            self._validate_sweep()

    def _validate_sweep(self):
        sw = self.sweep
        if sw.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep.parameter must be one of {SWEEP_PARAMETERS}")
        if not sw.values:
            raise ConfigError("sweep.values must be non-empty")
        for v in sw.values:
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(f"sweep values must be positive numbers, got {v!r}")
            if sw.parameter in ("B", "d") and int(v) != v:
                raise ConfigError(f"sweep over {sw.parameter} needs integers, got {v!r}")
        if sw.parameter == "d" and self.dataset.kind == "synthetic":
            if max(sw.values) >= self.dataset.n:
                raise ConfigError("sweep over d needs every d < n")
        if sw.parameter == "d" and self.dataset.kind == "csv" and self.dataset.features is None:
            raw, _ = load_csv(self.dataset.path, self.dataset.response_column)
            if max(sw.values) > raw.shape[1]:
                raise ConfigError(f"sweep over d exceeds the {raw.shape[1]} available features")

    def with_value(self, parameter, value) -> "ExperimentConfig":
        """Copy with one sweep parameter replaced (and no sweep block)."""
        if parameter == "gamma":
            new = replace(self, optim=replace(self.optim, gamma=float(value)))
        elif parameter == "B":
            new = replace(self, optim=replace(self.optim, B=int(value)))
        elif parameter == "d":
            ds = self.dataset
            if ds.kind == "synthetic":
                ds = replace(ds, d=int(value))
            else:
                ds = replace(ds, features=int(value)) if ds.features is not None else \
                    replace(ds, d=int(value))
            new = replace(self, dataset=ds)
        else:
            raise ConfigError(f"cannot sweep {parameter!r}")
        return replace(new, sweep=None)


# -- artifact writing -----------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Collector:
    """Single writer for one output directory; files appear atomically."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.digests: dict[str, str] = {}

    def write(self, name, text: str):
        data = text.encode("utf-8")
        target = self.root / name
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.digests[name] = sha256_bytes(data)

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        self.write(name, buf.getvalue())

    def write_json(self, name, obj):
        self.write(name, dumps(obj))


# -- pipeline stages ---------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig):
    ds = cfg.dataset
    if ds.kind == "synthetic":
        raw, b = gen_gaussian_synthetic(ds.n, ds.d, cfg.data_seed)
        meta = {"source": "synthetic-gaussian", "n": ds.n, "d": ds.d, "seed": cfg.data_seed}
    else:
        raw, b = load_csv(ds.path, ds.response_column)
        meta = {"source": "csv", "path": str(ds.path), "raw_shape": list(raw.shape)}
        if ds.features is not None:
            fseed = cfg.data_seed if ds.feature_seed is None else ds.feature_seed
            raw = random_features(raw, ds.features, fseed, ds.relu_scale)
            meta.update({"random_features": ds.features, "feature_seed": fseed,
                         "relu_scale": ds.relu_scale})
        elif ds.d < raw.shape[1]:
            raw = raw[:, :ds.d]
            meta["columns_used"] = ds.d
    if ds.drop_constant_columns:
        # constant columns (blank pixels, never-active ReLU units) make A^T A singular
        keep = np.ptp(raw, axis=0) > 0
        meta["dropped_constant_columns"] = [int(j) for j in np.flatnonzero(~keep)]
        raw = raw[:, keep]
    return make_dataset(raw, b, scale_response=ds.scale_response, meta=meta)


def _iqr_kappa(z, nu):
    """Scale ``kappa`` matching the sample IQR to that of ``kappa * t(nu)``."""
    q25, q75 = np.percentile(z, [25, 75])
    return float((q75 - q25) / stats.t_iqr(nu))


def _hsgd_ensemble(ds, spec, cfg: ExperimentConfig):
    """Final states of homogenized SGD run through the rescaled coupled system.

    The Euler-Maruyama step is ``analysis.hsgd_step`` (1.0 matches one SGD
    iteration per unit of time) and the horizon is ``K`` time units.
    """
    from .diffusion import build_pearson_params, simulate_z_system, transform_from_z, \
        transform_to_z
    params = build_pearson_params(spec, cfg.optim)
    init = InitSampler.from_dict(cfg.analysis.init)
    R = cfg.analysis.replicas
    X0 = np.empty((R, ds.d))
    for r in range(R):
        X0[r] = init.draw(np.random.default_rng(replica_seed(cfg.seed, r)), ds.d)
    rng = np.random.default_rng(replica_seed(cfg.seed, R))
    path = simulate_z_system(params, transform_to_z(X0, spec), cfg.analysis.hsgd_step,
                             cfg.optim.K * cfg.analysis.hsgd_step, rng, record_every=None)
    return transform_from_z(path.states[-1], spec)


class _Stages:
    def __init__(self):
        self.status: dict[str, dict] = {}

    def run(self, name, fn, *args):
        try:
            out = fn(*args)
        except _Skip as s:
            self.status[name] = {"status": "skipped", "detail": str(s)}
            return None
        except Exception as exc:  # noqa: BLE001  (recorded, pipeline continues)
            self.status[name] = {"status": "failed", "detail": f"{type(exc).__name__}: {exc}"}
            return None
        self.status[name] = {"status": "ok"}
        return out

    @property
    def failures(self):
        return [k for k, v in self.status.items() if v["status"] == "failed"]


class _Skip(Exception):
    pass


def _need(z, what):
    if z is None:
        raise _Skip("an upstream stage did not complete")
    if z.size < MIN_FIT_SAMPLES[what]:
        raise _Skip(f"needs at least {MIN_FIT_SAMPLES[what]} samples, have {z.size}")


def run_experiment(cfg: ExperimentConfig, output_dir=None, *, workers=None) -> dict:
    """Run one experiment and write its artifact bundle; returns a summary dict."""
    out = Collector(output_dir or cfg.output_dir)
    st = _Stages()
    res: dict = {"output_dir": str(out.root)}

    def stage_data():
        ds = build_dataset(cfg)
        spec = spectral(ds, cfg.optim.delta, strict=True)
        return ds, spec

    data = st.run("dataset", stage_data)
    ds, spec = data if data else (None, None)

    def stage_bounds():
        rep = tails.bounds_report(ds.n, ds.d, cfg.optim.B, cfg.optim.gamma, cfg.optim.delta,
                                  lambdas=spec.sigma)
        out.write_json("bounds.json", rep)
        return rep

    bounds = st.run("bounds", stage_bounds) if spec is not None else None

    def stage_ensemble():
        if cfg.analysis.dynamics == "hsgd":
            finals = _hsgd_ensemble(ds, spec, cfg)
            divergent = [int(r) for r in np.flatnonzero(~np.isfinite(finals).all(axis=1))]
        else:
            ens = run_ensemble(ds, cfg.optim, cfg.analysis.init, spec,
                               guard=cfg.analysis.guard, workers=workers)
            finals, divergent = ens.finals, ens.divergent_replicas
        y = finals @ spec.q1
        fin = np.isfinite(y)
        z = y - (y[fin].mean() if fin.any() else 0.0)
        out.write_csv("ensemble.csv", ["replica", "y", "z"],
                      ([r, float(y[r]), float(z[r])] for r in range(y.size)))
        out.write_json("ensemble.json", {
            "config": {**asdict(cfg.optim), "replicas": cfg.analysis.replicas},
            "dataset_digest": ds.digest(),
            "divergent_replicas": divergent,
            "dynamics": cfg.analysis.dynamics,
            "init": cfg.analysis.init,
            "seeding": "replica r uses splitmix64(splitmix64(seed) ^ r)",
        })
        return z[fin]

    z = st.run("ensemble", stage_ensemble) if spec is not None else None

    def stage_fit_t():
        _need(z, "t")
        f = stats.fit_t_mle(z, center=False)
        out.write_json("fit_t.json", f.to_json())
        return f

    def stage_fit_stable():
        _need(z, "stable")
        f = stats.fit_stable_quantile(z)
        out.write_json("fit_stable.json", f.to_json())
        return f

    fams = cfg.analysis.fit_families
    fit_t = st.run("fit_t", stage_fit_t) if "t" in fams else None
    fit_st = st.run("fit_stable", stage_fit_stable) if "stable" in fams else None

    def stage_ks():
        _need(z, "ks")
        if bounds is None:
            raise _Skip("bounds unavailable")
        report = {"n": int(z.size), "level": stats.KS_LEVEL,
                  "kappa_rule": "IQR of kappa*t(nu) matched to the sample IQR"}
        if fit_t is not None:
            p = fit_t.params
            report["two_sided_fitted_t"] = {
                **stats.ks_test(z, lambda x: stats.t_cdf(x, p["nu"], p["kappa"])).to_json(),
                "nu": p["nu"], "kappa": p["kappa"]}
        for key, variant, nu in (("upper_bound", "one_sided_geq", bounds["eta_upper"]),
                                 ("lower_bound", "one_sided_leq", bounds["eta_lower"])):
            if nu is None or not nu > 0:
                report[key] = {"skipped": f"bound {nu} is not a valid degrees-of-freedom value"}
                continue
            kap = _iqr_kappa(z, nu)
            r = stats.ks_test(z, lambda x, nu=nu, kap=kap: stats.t_cdf(x, nu, kap), variant)
            report[key] = {**r.to_json(), "nu": nu, "kappa": kap}
        out.write_json("ks.json", report)
        return report

    ks = st.run("ks", stage_ks)

    def stage_ccdf():
        _need(z, "ks")
        x, cc = stats.empirical_ccdf(np.abs(z))
        out.write_csv("ccdf.csv", ["x", "ccdf"], zip(x.tolist(), cc.tolist()))
        series = [("empirical |z|", x, cc)]
        grid = x[x > 0]
        for label, key in (("t(eta_lower)", "eta_lower"), ("t(eta_upper)", "eta_upper")):
            nu = bounds.get(key) if bounds else None
            if nu is not None and nu > 0 and grid.size:
                kap = _iqr_kappa(z, nu)
                series.append((f"{label}={nu:.2f}", grid, 2.0 * stats.t_sf(grid, nu, kap)))
        out.write("ccdf.svg", plots.loglog_svg(series, f"{cfg.name}: CCDF of |z|"))
        return True

    st.run("ccdf", stage_ccdf)

    def stage_qq():
        _need(z, "ks")
        panels = []
        k = min(cfg.analysis.qq_points, z.size)
        if fit_t is not None:
            p = fit_t.params
            th, em = stats.qq_points(z, lambda q: stats.t_ppf(q, p["nu"], p["kappa"]), k)
            out.write_csv("qq.csv", ["theoretical", "empirical"], zip(th.tolist(), em.tolist()))
            panels.append(plots.qq_svg(th, em, f"QQ: fitted t (nu={p['nu']:.2f})"))
        if fit_st is not None:
            _, ppf = stats.stable_reference(fit_st.params)
            th, em = stats.qq_points(z, ppf, k)
            out.write_csv("qq_stable.csv", ["theoretical", "empirical"],
                          zip(th.tolist(), em.tolist()))
            panels.append(plots.qq_svg(
                th, em, f"QQ: fitted alpha-stable (alpha={fit_st.params['alpha']:.2f})"))
        if not panels:
            raise _Skip("no fitted family available")
        out.write("qq.svg", plots.stack_svgs(panels))
        return True

    st.run("qq", stage_qq)

    res.update({
        "stages": st.status,
        "failures": st.failures,
        "bounds": bounds,
        "fit_t": fit_t.params if fit_t else None,
        "fit_stable": fit_st.params if fit_st else None,
        "ks": ks,
        "lambda1": float(spec.lambda1) if spec is not None else None,
        "abs_z_q99": float(np.quantile(np.abs(z), 0.99)) if z is not None and z.size else None,
        "z": z,
    })
    manifest = {
        "tool": {"name": "tailbench", "version": __version__, "backend": _backend.BACKEND},
        "config": cfg.to_dict(),
        "seeds": {"experiment": cfg.seed, "data": cfg.data_seed,
                  "replica_rule": "splitmix64(splitmix64(seed) ^ r)"},
        "dataset_digest": ds.digest() if ds is not None else None,
        "dataset": ds.meta if ds is not None else None,
        "stages": st.status,
        "artifacts": dict(sorted(out.digests.items())),
    }
    out.write_json("manifest.json", manifest)
    return res


# -- sweeps ----------------------------------------------------------------------

def _value_label(parameter, v):
    return f"{parameter}_{int(v)}" if parameter in ("B", "d") else f"{parameter}_{float(v):g}"


def run_sweep(cfg: ExperimentConfig, output_dir=None) -> dict:
    """One bundle per sweep value, a ``summary.csv`` and a combined CCDF overlay."""
    if cfg.sweep is None:
        raise ConfigError("config has no sweep block")
    root = Collector(output_dir or cfg.output_dir)
    param, values = cfg.sweep.parameter, list(cfg.sweep.values)
    budget = _backend.workers()
    outer = min(budget, len(values))
    inner = max(1, budget // max(outer, 1))

    def one(v):
        sub = cfg.with_value(param, v)
        label = _value_label(param, v)
        try:
            r = run_experiment(sub, root.root / label, workers=inner)
        except Exception as exc:  # noqa: BLE001
            r = {"failures": ["experiment"], "error": f"{type(exc).__name__}: {exc}"}
        return label, r

    if outer > 1:
        with ThreadPoolExecutor(outer) as pool:
            results = list(pool.map(one, values))
    else:
        results = [one(v) for v in values]

    rows, series = [], []
    for v, (label, r) in zip(values, results):
        b = r.get("bounds") or {}
        ft = r.get("fit_t") or {}
        rows.append([v, r.get("lambda1"), b.get("eta_lower"), b.get("eta_upper"), ft.get("nu"),
                     r.get("abs_z_q99")])
        z = r.get("z")
        if z is not None and z.size:
            x, cc = stats.empirical_ccdf(np.abs(z))
            series.append((label, x, cc))
    fmt = [[("" if c is None else c) for c in row] for row in rows]
    root.write_csv("summary.csv", ["value", "lambda1", "eta_lower", "eta_upper", "nu_hat",
                                   "abs_z_q99"], fmt)
    root.write("ccdf_overlay.svg",
               plots.loglog_svg(series, f"{cfg.name}: CCDF of |z| across {param}")
               if series else plots.loglog_svg([], f"{cfg.name}: no completed runs"))
    failures = {label: r.get("failures") for label, r in results if r.get("failures")}
    root.write_json("manifest.json", {
        "tool": {"name": "tailbench", "version": __version__, "backend": _backend.BACKEND},
        "config": cfg.to_dict(),
        "sweep": {"parameter": param, "values": values,
                  "runs": [label for label, _ in results]},
        "failures": failures,
        "artifacts": dict(sorted(root.digests.items())),
    })
    return {"rows": rows, "results": dict(results), "failures": failures,
            "output_dir": str(root.root)}

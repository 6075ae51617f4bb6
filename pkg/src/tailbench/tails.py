"""Closed-form tail-index bounds and the drift condition behind the lower bound.

With ``c = 2 n B (lambda_1^2 + n delta) / (gamma lambda_1^4)``:

* upper bound   ``eta_upper = 1 + c``
* lower bound   ``eta_lower = 1 + c - sum_{i>=2} lambda_i^2 / lambda_1^2``
* the lower bound applies when ``gamma < gamma_bar = 2 n B (lambda_1^2 + n delta) / (lambda_1^2 tr(A^T A))``
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class TailBounds:
    eta_lower: float
    eta_upper: float
    gamma_bar: float
    valid_lower: bool


def _check(n, B, delta, gamma, lambda1):
    if not (n > 0 and B > 0):
        raise ValueError("n and B must be positive")
    if not delta >= 0:
        raise ValueError("delta must be non-negative")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")


def _c(n, B, delta, gamma, lambda1):
    l2 = lambda1 * lambda1
    return 2.0 * n * B * (l2 + n * delta) / (gamma * l2 * l2)


def eta_upper(n, B, delta, gamma, lambda1):
    _check(n, B, delta, gamma, lambda1)
    return 1.0 + _c(n, B, delta, gamma, lambda1)


def spectral_gap_term(lambdas):
    """``sum_{i>=2} lambda_i^2 / lambda_1^2`` for a descending spectrum."""
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("need a non-empty 1-d spectrum")
    if np.any(np.diff(lam) > 0):
        raise ValueError("spectrum must be sorted in descending order")
    l1 = lam[0]
    if not l1 > 0:
        raise ValueError("lambda1 must be positive")
    return float(np.sum((lam[1:] / l1) ** 2))


def eta_lower(n, B, delta, gamma, lambdas):
    lam = np.asarray(lambdas, dtype=float)
    gap = spectral_gap_term(lam)
    return eta_upper(n, B, delta, gamma, float(lam[0])) - gap


def gamma_bar(n, B, delta, lambdas):
    lam = np.asarray(lambdas, dtype=float)
    l1 = float(lam[0])
    if not l1 > 0:
        raise ValueError("lambda1 must be positive")
    tr = float(np.sum(lam**2))
    return 2.0 * n * B * (l1 * l1 + n * delta) / (l1 * l1 * tr)


def tail_bounds(n, B, delta, gamma, lambdas) -> TailBounds:
    gb = gamma_bar(n, B, delta, lambdas)
    return TailBounds(
        eta_lower=eta_lower(n, B, delta, gamma, lambdas),
        eta_upper=eta_upper(n, B, delta, gamma, float(np.asarray(lambdas)[0])),
        gamma_bar=gb,
        valid_lower=bool(gamma < gb),
    )


def vartheta(n, B, delta, gamma, lambdas):
    """Critical exponent of the drift condition: the root in rho of q(lambda_1^2, rho).

    Algebraically identical to :func:`eta_lower`; computed independently
    from the trace so the two can be checked against each other.
    """
    lam = np.asarray(lambdas, dtype=float)
    l1 = float(lam[0])
    _check(n, B, delta, gamma, l1)
    tr = float(np.sum(lam**2))
    return 2.0 + _c(n, B, delta, gamma, l1) - tr / (l1 * l1)


def q_value(m, rho, n, B, delta, gamma, trace_AtA):
    """``q(m, rho) = 2 n B (m + n delta) / gamma - tr(A^T A) m + (2 - rho) m^2``."""
    m = np.asarray(m, dtype=float)
    return 2.0 * n * B * (m + n * delta) / gamma - trace_AtA * m + (2.0 - rho) * m * m


@dataclass(frozen=True)
class DriftMargin:
    q_at_lambda1sq: float
    q_at_lambdadsq: float
    inf_q: float
    satisfied: bool


def drift_condition_margin(lambdas, n, B, delta, gamma, rho) -> DriftMargin:
    """Infimum of ``q(m, rho)`` over the Rayleigh-quotient range [lambda_d^2, lambda_1^2].

    ``q`` is concave in ``m`` for ``rho >= 2``, so the infimum sits at an
    endpoint.  ``satisfied`` means ``inf_q > 0``.
    """
    if not rho >= 2:
        raise ValueError("the endpoint reduction needs rho >= 2")
    lam = np.asarray(lambdas, dtype=float)
    tr = float(np.sum(lam**2))
    q1 = float(q_value(lam[0] ** 2, rho, n, B, delta, gamma, tr))
    qd = float(q_value(lam[-1] ** 2, rho, n, B, delta, gamma, tr))
    inf_q = min(q1, qd)
    return DriftMargin(q1, qd, inf_q, bool(inf_q > 0))


def drift_condition_for(spec, cfg, rho) -> DriftMargin:
    return drift_condition_margin(spec.sigma, spec.n, cfg.B, cfg.delta, cfg.gamma, rho)


def wishart_expected_lambda1sq(n, d, sigma2=1.0):
    """Mean top eigenvalue of ``A^T A`` for Gaussian ``A`` with entry variance ``sigma2``."""
    if not n > d >= 1:
        raise ValueError("need n > d >= 1")
    return sigma2 * (math.sqrt(n - 1) + math.sqrt(d)) ** 2


def bounds_report(n, d, B, gamma, delta, lambdas=None, lambda1=None) -> dict:
    """JSON-ready bounds; without a full spectrum only the upper bound is known."""
    if lambdas is not None:
        lam = np.asarray(lambdas, dtype=float)
        tb = tail_bounds(n, B, delta, gamma, lam)
        out = asdict(tb)
        out["lambda1"] = float(lam[0])
        out["trace_AtA"] = float(np.sum(lam**2))
    else:
        if lambda1 is None:
            raise ValueError("need lambda1 or a full spectrum")
        out = {
            "eta_lower": None,
            "eta_upper": eta_upper(n, B, delta, gamma, lambda1),
            "gamma_bar": None,
            "valid_lower": None,
            "lambda1": float(lambda1),
            "trace_AtA": None,
        }
    out.update({"n": int(n), "d": int(d), "B": int(B), "gamma": float(gamma),
                "delta": float(delta)})
    return out


def dump_bounds(report, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")

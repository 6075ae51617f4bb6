"""Datasets for the ridge-regression experiments and their spectral data.

A :class:`Dataset` holds the min-max scaled design matrix and responses;
:func:`spectral` turns it into a :class:`Spectrum` (thin SVD, least-squares
minimizer and the constants that parametrize the reduced diffusion).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RELU_SCALE = math.sqrt(2.0)
RANK_TOL = 1e-10


class DegenerateInputError(ValueError):
    """Input data that cannot be scaled or decomposed (e.g. constant)."""


class AssumptionViolation(ValueError):
    """The design matrix is rank deficient or ``b`` lies in its column space."""


class CsvParseError(ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Dataset:
    A: np.ndarray
    b: np.ndarray
    scale_min: float = 0.0
    scale_max: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=float)
        b = np.ascontiguousarray(self.b, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError(f"design matrix must be 2-d and non-empty, got shape {A.shape}")
        if b.shape[0] != A.shape[0]:
            raise ValueError(f"b has length {b.shape[0]}, expected {A.shape[0]}")
        if not (np.isfinite(A).all() and np.isfinite(b).all()):
            raise ValueError("dataset contains non-finite entries")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.A.shape, dtype=np.int64).tobytes())
        h.update(self.A.tobytes())
        h.update(self.b.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Spectrum:
    """Thin SVD ``A = P diag(sigma) Q^T`` plus derived constants.

    ``beta`` is the squared norm of the part of ``b`` outside the column
    space of ``A``; ``alpha`` is the constant offset in the drift of the
    centred principal components (zero when ``delta == 0``).
    """

    P: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray
    x_star: np.ndarray
    alpha: np.ndarray
    beta: float
    trace_AtA: float
    n: int
    delta: float = 0.0
    assumption_ok: bool = True

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def lambda1(self) -> float:
        return float(self.sigma[0])

    @property
    def q1(self) -> np.ndarray:
        return self.Q[:, 0]

    def to_json(self) -> dict:
        return {
            "n": int(self.n),
            "d": int(self.d),
            "lambda": [float(v) for v in self.sigma],
            "beta": float(self.beta),
            "x_star": [float(v) for v in self.x_star],
            "trace_AtA": float(self.trace_AtA),
        }


def minmax_scale(raw) -> tuple[np.ndarray, float, float]:
    """Affinely map the whole array onto [0, 1] with one global min/max."""
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0 or not np.isfinite(raw).all():
        raise DegenerateInputError("raw data must be non-empty and finite")
    lo, hi = float(raw.min()), float(raw.max())
    if not hi > lo:
        raise DegenerateInputError(f"constant data (min = max = {lo}) cannot be scaled")
    return (raw - lo) / (hi - lo), lo, hi


def make_dataset(raw, b, scale_response=False, meta=None) -> Dataset:
    """Scale ``raw`` (and optionally ``b``) and wrap the result."""
    A, lo, hi = minmax_scale(raw)
    b = np.asarray(b, dtype=float)
    if scale_response:
        b = (b - lo) / (hi - lo)
    return Dataset(A, b, lo, hi, dict(meta or {}))


def gen_gaussian_synthetic(n, d, seed):
    """Isotropic Gaussian rows, hidden weights ~ N(0, 3 I), noise variance 3.

    Returns the *unscaled* matrix and the response vector.  Columns are
    drawn one at a time, so for a fixed seed ``X[:, :d]`` is the same
    matrix for every larger ``d``.
    """
    if n <= d:
        warnings.warn(
            f"n={n} <= d={d}: the design matrix cannot have full column rank",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, n)).T
    w = rng.normal(0.0, math.sqrt(3.0), size=d)
    b = rng.normal(X @ w, math.sqrt(3.0))
    return X, b


def rescaled_relu(x, scale=RELU_SCALE):
    return scale * np.maximum(x, 0.0)


def random_features(Y, d, seed, relu_scale=RELU_SCALE, W=None):
    """ReLU random features ``relu_scale * max(0, Y W / sqrt(n0))``.

    ``W`` (n0 x d) may be passed explicitly; otherwise it is drawn with
    standard Gaussian entries from ``seed``.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 1 or d < 1:
        raise ValueError("Y must be a 2-d array with at least one column, d >= 1")
    n0 = Y.shape[1]
    if W is None:
        W = np.random.default_rng(seed).standard_normal((n0, d))
    W = np.asarray(W, dtype=float)
    if W.shape != (n0, d):
        raise ValueError(f"W has shape {W.shape}, expected {(n0, d)}")
    return rescaled_relu(Y @ W / math.sqrt(n0), relu_scale)


def _parse_float(cell):
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path, response_column=-1):
    """Read a numeric CSV; one column becomes ``b``, the rest the raw matrix.

    A header row is detected when the first row contains a non-numeric cell.
    """
    path = Path(path)
    if not path.is_file():
        raise CsvParseError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise CsvParseError(f"{path} is empty")
    first = rows[0]
    if any(_parse_float(c) is None for c in first):
        rows = rows[1:]
        start = 2
    else:
        start = 1
    if not rows:
        raise CsvParseError(f"{path} has a header but no data")
    width = len(rows[0])
    data = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise CsvParseError(
                f"ragged row: expected {width} cells, got {len(row)}", row=r + start
            )
        for c, cell in enumerate(row):
            v = _parse_float(cell)
            if v is None:
                raise CsvParseError(f"non-numeric cell {cell!r}", row=r + start, column=c + 1)
            data[r, c] = v
    col = response_column % width
    if width < 2:
        raise CsvParseError("need at least one feature column besides the response")
    b = data[:, col]
    raw = np.delete(data, col, axis=1)
    return raw, b


def _fix_signs(P, Q):
    # first nonzero entry of every column of Q made positive
    for j in range(Q.shape[1]):
        col = Q[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-14)
        if nz.size and col[nz[0]] < 0:
            Q[:, j] = -col
            P[:, j] = -P[:, j]
    return P, Q


def spectral(ds: Dataset, delta=0.0, strict=True) -> Spectrum:
    """Thin SVD of ``ds.A`` and the constants of the reduced dynamics.

    Raises :class:`AssumptionViolation` when the smallest singular value is
    below ``RANK_TOL * lambda_1``; when ``b`` lies in the column space
    (``beta`` numerically zero) it raises only if ``strict``.
    """
    A, b, n = ds.A, ds.b, ds.n
    if ds.n < ds.d:
        raise AssumptionViolation(f"n={ds.n} < d={ds.d}: A^T A is singular")
    P, sigma, Qt = np.linalg.svd(A, full_matrices=False)
    Q = Qt.T.copy()
    P = P.copy()
    P, Q = _fix_signs(P, Q)
    if sigma[0] <= 0 or sigma[-1] < RANK_TOL * sigma[0]:
        bad = int(np.flatnonzero(sigma < RANK_TOL * max(sigma[0], 1e-300))[0])
        raise AssumptionViolation(
            f"rank-deficient design: singular value index {bad} is {sigma[bad]:.3e}"
        )
    Ptb = P.T @ b
    x_star = Q @ (Ptb / sigma)
    resid = b - P @ Ptb
    beta = float(resid @ resid)
    ok = beta > 1e-12 * max(float(b @ b), 1e-300)
    if not ok:
        msg = f"b lies in the column space of A (beta = {beta:.3e})"
        if strict:
            raise AssumptionViolation(msg)
        warnings.warn(msg, stacklevel=2)
    alpha = -delta * (Q.T @ x_star)
    for arr in (P, sigma, Q, x_star, alpha):
        arr.setflags(write=False)
    return Spectrum(
        P=P,
        sigma=sigma,
        Q=Q,
        x_star=x_star,
        alpha=alpha,
        beta=beta,
        trace_AtA=float(np.sum(sigma**2)),
        n=n,
        delta=float(delta),
        assumption_ok=bool(ok),
    )


def export_spectrum(spec: Spectrum, path):
    Path(path).write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n")

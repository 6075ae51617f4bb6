"""Pure-NumPy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def sgd_block(A, b, X, idx, gamma, delta, guard):
    m, d = X.shape
    K, B = idx.shape[1], idx.shape[2]
    diverged = np.full(m, -1, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    guard2 = guard * guard
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            if not active.any():
                break
            rows_idx = idx[active, k, :]
            rows = A[rows_idx]                              # (m', B, d)
            Xa = X[active]
            res = np.einsum("mbd,md->mb", rows, Xa) - b[rows_idx]
            g = np.einsum("mb,mbd->md", res, rows)
            Xa = Xa - (gamma / B * g + gamma * delta * Xa)
            X[active] = Xa
            nrm = np.einsum("md,md->m", Xa, Xa)
            bad = ~((nrm <= guard2) & np.isfinite(nrm))
            if bad.any():
                where = np.flatnonzero(active)[bad]
                diverged[where] = k
                active[where] = False
    return diverged


def em_steps(Z, dW, theta, mu, a, h, coupled):
    amp = np.sqrt(2.0 * theta * a) * np.sqrt(h)
    drift = theta * h
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(dW.shape[0]):
            if coupled:
                sq = np.sqrt(np.einsum("pc,pc->p", Z, Z) + 1.0)[:, None]
            else:
                sq = np.sqrt(Z * Z + 1.0)
            Z[...] = Z - drift * (Z - mu) + amp * sq * dW[s]
            if not np.isfinite(Z).all():
                return s
    return -1

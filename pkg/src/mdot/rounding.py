"""Exact rounding of an almost-feasible plan onto U(r, c)."""

import numpy as np

# Below this L1 mass the rank-one correction is skipped.
ERR_FLOOR = 1e-15


def round_to_polytope(F, m):
    """Shrink rows, then columns, to fit the targets and restore the missing mass with a rank-one term.

    The output is non-negative with row sums ``m.r`` and column sums ``m.c``
    up to round-off.
    """
    F = np.asarray(F, dtype=np.float64)
    if not (np.all(F >= 0) and np.all(np.isfinite(F))):
        raise ValueError("rounding expects a finite non-negative matrix")
    with np.errstate(divide="ignore"):
        x = np.minimum(m.r / F.sum(axis=1), 1.0)
        F1 = x[:, None] * F
        y = np.minimum(m.c / F1.sum(axis=0), 1.0)
    F2 = F1 * y[None, :]
    err_r = m.r - F2.sum(axis=1)
    err_c = m.c - F2.sum(axis=0)
    mass = np.abs(err_r).sum()
    if mass < ERR_FLOOR:
        return F2
    return F2 + np.outer(err_r, err_c) / mass

"""Analysis tools: exact OT for uniform marginals, dual Hessian spectra, Hilbert metric."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import log_plan, materialize

# lambda_2 below this is reported as degenerate.
LAMBDA2_FLOOR = 1e-14
DENSE_EIG_CAP = 64


class DegenerateSpectrum(ValueError):
    pass


def exact_assignment_ot(C):
    """Optimal transport cost between two uniform marginals.

    For uniform weights the transportation polytope is a scaled Birkhoff
    polytope, so an optimal vertex is a permutation and the LP value is the
    assignment cost divided by ``n``.
    """
    C = np.asarray(C, dtype=np.float64)
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].sum() / C.shape[0])


def brute_force_assignment_ot(C):
    """Same value as :func:`exact_assignment_ot` by enumerating all ``n!`` permutations."""
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if n > 9:
        raise ValueError("brute force limited to n <= 9")
    idx = np.arange(n)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, C[idx, perm].sum())
    return float(best / n)


def dual_hessian(plan, m):
    """Hessian of the dual objective: ``[[D(r(P)), P], [P^T, D(c(P))]]``."""
    P = materialize(plan)
    n = P.shape[0]
    if n > DENSE_EIG_CAP:
        raise ValueError(f"dense Hessian diagnostics capped at n = {DENSE_EIG_CAP}")
    H = np.empty((2 * n, 2 * n))
    H[:n, :n] = np.diag(P.sum(axis=1))
    H[n:, n:] = np.diag(P.sum(axis=0))
    H[:n, n:] = P
    H[n:, :n] = P.T
    return H


def preconditioner_diagonal(plan, m):
    """Diagonal of ``M`` with ``s = M grad g``, i.e. ``(log a - log r) / (a - r)`` per coordinate.

    Where ``a == r`` the ratio is replaced by its limit ``1 / r``.
    """
    P = materialize(plan)
    parts = []
    for cur, tgt in ((P.sum(axis=1), m.r), (P.sum(axis=0), m.c)):
        d = cur - tgt
        close = np.abs(d) <= 1e-12 * tgt
        safe = np.where(close, 1.0, d)
        ratio = np.where(close, 1.0 / tgt, (np.log(cur) - np.log(tgt)) / safe)
        parts.append(ratio)
    return np.concatenate(parts)


def spectrum(H, precond=None):
    """Ascending eigenvalues of ``H`` or of ``M^{1/2} H M^{1/2}`` for diagonal ``M``."""
    H = np.asarray(H, dtype=np.float64)
    if precond is not None:
        d = np.asarray(precond, dtype=np.float64)
        if not np.all(d > 0):
            raise ValueError("preconditioner diagonal must be positive")
        root = np.sqrt(d)
        H = root[:, None] * H * root[None, :]
    return np.linalg.eigvalsh(0.5 * (H + H.T))


def pseudo_condition_number(H, precond=None):
    """lambda_max / lambda_2, ignoring the structural null direction."""
    lam = spectrum(H, precond)
    if lam[1] < LAMBDA2_FLOOR:
        raise DegenerateSpectrum(f"lambda_2 = {lam[1]:.3e} is numerically zero")
    return float(lam[-1] / lam[1])


def preconditioning_gain(plan, m):
    """Pseudo-condition number of the Hessian divided by that of the preconditioned Hessian."""
    H = dual_hessian(plan, m)
    return pseudo_condition_number(H) / pseudo_condition_number(H, preconditioner_diagonal(plan, m))


def var_norm(x):
    return float(np.max(x) - np.min(x))


def hilbert_metric(p, q):
    """max_i log(p_i/q_i) - min_i log(p_i/q_i)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("arguments must have the same shape")
    if not (np.all(p > 0) and np.all(q > 0)):
        raise ValueError("Hilbert metric requires strictly positive arguments")
    return var_norm(np.log(p) - np.log(q))


def contraction_rate(gamma, t, C):
    """tanh(gamma t ||C||_inf / 2)."""
    return math.tanh(gamma * t * float(np.max(np.abs(C))) / 2.0)


def contraction_bound_check(t, gamma, C, log_base, inner, u_star, v_star, m):
    """Compare Sinkhorn iterates at MD step ``t`` against the contraction bound.

    Parameters
    ----------
    log_base : ndarray
        Log base of the plan being projected at step ``t``.
    inner : list of (k, u, v)
        Recorded potentials; ``k = 0`` is the warm start ``P^{t,0}``.
    u_star, v_star : ndarray
        Potentials of the exact projection.

    Returns
    -------
    list of (k, lhs, rhs) for every recorded ``k >= 1``.
    """
    start = {k: (u, v) for k, u, v in inner}[0]
    P0 = np.exp(log_plan(log_base, *start))
    initial = hilbert_metric(P0.sum(axis=1), m.r) + hilbert_metric(P0.sum(axis=0), m.c)
    kappa = contraction_rate(gamma, t, C)
    out = []
    for k, u, v in inner:
        if k < 1:
            continue
        lhs = var_norm(u_star - u) + var_norm(v_star - v)
        denom = 1.0 - kappa ** 2
        rhs = kappa ** k / denom * initial if denom > 0 else math.inf
        out.append((k, lhs, rhs))
    return out

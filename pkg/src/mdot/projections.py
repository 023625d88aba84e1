"""Bregman projections onto the transportation polytope.

Both engines minimize the dual objective ``g(u, v)`` of a :class:`ScaledPlan`
and return updated potentials; the input potentials are the warm start.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import linesearch
from .core import (
    Projector,
    ScaledPlan,
    SolveTrace,
    exp_checked,
    infeasibility_from_sums,
    log_plan,
    marginals_of,
    sinkhorn_direction_from_sums,
)

DEFAULT_MAX_ITERS = 100_000
# |<grad^{k-1}, p^{k-1}>| below this forces a CG reset.
BETA_DENOM_FLOOR = 1e-300


@dataclass
class ProjectionResult:
    plan: ScaledPlan
    iterations: int
    final_rho: float
    converged: bool
    initial_rho: float
    phi_evals: int = 0
    line_searches: int = 0
    resets: int = 0
    non_wolfe_steps: int = 0
    elapsed_s: float = 0.0
    trace: SolveTrace = field(default_factory=SolveTrace)


def _dual_value(P, u, v, m):
    return float(P.sum() - u @ m.r - v @ m.c - 1.0)


def sinkhorn_project(plan, m, eps, max_iters=DEFAULT_MAX_ITERS, step=1, callback=None):
    """Alternating row/column scaling until ``rho <= eps``.

    Odd iterations rescale rows, even iterations rescale columns, so ``k``
    counts half-sweeps. ``callback(k, u, v)`` receives copies of the
    potentials after every update (and once with ``k = 0`` for the warm start).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    start = time.perf_counter()
    u, v = plan.u.copy(), plan.v.copy()
    log_r, log_c = np.log(m.r), np.log(m.c)
    trace = SolveTrace()

    P = exp_checked(log_plan(plan.log_base, u, v), plan.gamma)
    a, b = marginals_of(P, plan.gamma)
    rho = rho0 = infeasibility_from_sums(a, b, m)
    trace.append(step, 0, rho, _dual_value(P, u, v, m), 0, 0.0)
    if callback is not None:
        callback(0, u.copy(), v.copy())

    k = 0
    while rho > eps and k < max_iters:
        k += 1
        if k % 2 == 1:
            u += log_r - np.log(a)
        else:
            v += log_c - np.log(b)
        P = exp_checked(log_plan(plan.log_base, u, v), plan.gamma)
        a, b = marginals_of(P, plan.gamma)
        rho = infeasibility_from_sums(a, b, m)
        trace.append(step, k, rho, _dual_value(P, u, v, m), 0, time.perf_counter() - start)
        if callback is not None:
            callback(k, u.copy(), v.copy())

    return ProjectionResult(
        plan=plan.with_potentials(u, v),
        iterations=k,
        final_rho=rho,
        converged=rho <= eps,
        initial_rho=rho0,
        elapsed_s=time.perf_counter() - start,
        trace=trace,
    )


def _dot(x, y):
    return float(x[0] @ y[0] + x[1] @ y[1])


def beta_ppr(grad_k, grad_km1, s_k, p_km1):
    """Preconditioned Polak-Ribiere coefficient.

    Directions follow ``p^k = -s^k + beta p^{k-1}`` (descent convention), so
    the previous slope ``<grad^{k-1}, p^{k-1}>`` is negative and enters with
    a minus sign; with ``p^{k-1} = -s^{k-1}`` this is the familiar
    ``<grad^k - grad^{k-1}, s^k> / <grad^{k-1}, s^{k-1}>``.

    Returns ``None`` when the denominator vanishes (the caller resets).
    """
    denom = -_dot(grad_km1, p_km1)
    if abs(denom) < BETA_DENOM_FLOOR:
        return None
    diff = (grad_k[0] - grad_km1[0], grad_k[1] - grad_km1[1])
    return _dot(diff, s_k) / denom


def beta_pr(grad_k, grad_km1):
    """Plain Polak-Ribiere coefficient used by the unpreconditioned variant."""
    denom = _dot(grad_km1, grad_km1)
    if denom < BETA_DENOM_FLOOR:
        return None
    diff = (grad_k[0] - grad_km1[0], grad_k[1] - grad_km1[1])
    return _dot(diff, grad_k) / denom


def phi_prime(alpha, p, plan, m):
    """Derivative of ``g`` along ``p`` at ``(u, v) + alpha p``."""
    pu, pv = p
    P = exp_checked(log_plan(plan.log_base, plan.u + alpha * pu, plan.v + alpha * pv), plan.gamma)
    return float(pu @ (P.sum(axis=1) - m.r) + pv @ (P.sum(axis=0) - m.c))


def line_search(p, plan, m, c1=linesearch.C1, c2=linesearch.C2):
    """Step size along ``p`` from the current potentials of ``plan``."""
    L = log_plan(plan.log_base, plan.u, plan.v)
    pu, pv = p
    P0 = exp_checked(L, plan.gamma)
    dphi0 = float(pu @ (P0.sum(axis=1) - m.r) + pv @ (P0.sum(axis=0) - m.c))
    return linesearch.line_search(_phi_prime_along(L, p, m, plan.gamma), dphi0, c1=c1, c2=c2)


def _phi_prime_along(L, p, m, gamma):
    pu, pv = p

    def evaluate(alpha):
        # An underflowed row or column is unusable downstream (log of zero),
        # so the line search treats it like overflow: the step went too far.
        P = exp_checked(L + alpha * pu[:, None] + alpha * pv[None, :], gamma)
        a, b = marginals_of(P, gamma)
        return float(pu @ (a - m.r) + pv @ (b - m.c)), (P, a, b)

    return evaluate


def pncg_project(plan, m, eps, variant=Projector.PNCG, max_iters=DEFAULT_MAX_ITERS,
                 step=1, callback=None, c1=linesearch.C1, c2=linesearch.C2,
                 direction_log=None):
    """Nonlinear conjugate gradients on the dual, optionally preconditioned.

    With ``variant=PNCG`` the search direction is built from the Sinkhorn
    direction ``s``; with ``variant=NCG`` from the raw gradient. A direction
    that fails to descend is replaced by ``-s`` (CG reset).

    ``direction_log``, if a list, receives ``(k, p, s, reset)`` per iteration.
    """
    variant = Projector(variant)
    if variant is Projector.SINKHORN:
        raise ValueError("use sinkhorn_project for the Sinkhorn engine")
    if not eps > 0:
        raise ValueError("eps must be positive")
    start = time.perf_counter()
    u, v = plan.u.copy(), plan.v.copy()
    trace = SolveTrace()

    L = log_plan(plan.log_base, u, v)
    P = exp_checked(L, plan.gamma)
    a, b = marginals_of(P, plan.gamma)
    rho = rho0 = infeasibility_from_sums(a, b, m)
    trace.append(step, 0, rho, _dual_value(P, u, v, m), 0, 0.0)
    if callback is not None:
        callback(0, u.copy(), v.copy())

    k = 0
    evals = resets = non_wolfe = 0
    grad_prev = p_prev = None
    while rho > eps and k < max_iters:
        k += 1
        grad = (a - m.r, b - m.c)
        if variant is Projector.PNCG:
            s = sinkhorn_direction_from_sums(a, b, m)
        else:
            s = grad

        beta = None
        if k > 1:
            beta = beta_ppr(grad, grad_prev, s, p_prev) if variant is Projector.PNCG \
                else beta_pr(grad, grad_prev)
        reset = beta is None
        if not reset:
            p = (-s[0] + beta * p_prev[0], -s[1] + beta * p_prev[1])
            if _dot(p, grad) >= 0:
                reset = True
        if reset:
            p = (-s[0], -s[1])
            resets += k > 1
        if direction_log is not None:
            direction_log.append((k, p, s, reset))

        dphi0 = _dot(p, grad)
        try:
            found = linesearch.line_search(_phi_prime_along(L, p, m, plan.gamma), dphi0, c1=c1, c2=c2)
        except linesearch.LineSearchError as err:
            err.args = (f"{err.args[0]} (projection iteration {k}, rho={rho:.3e})",)
            raise
        evals += found.evals
        non_wolfe += not found.wolfe
        alpha = found.alpha

        u += alpha * p[0]
        v += alpha * p[1]
        L = log_plan(plan.log_base, u, v)
        P, a, b = found.payload
        rho = infeasibility_from_sums(a, b, m)
        trace.append(step, k, rho, _dual_value(P, u, v, m), found.evals, time.perf_counter() - start)
        if callback is not None:
            callback(k, u.copy(), v.copy())
        grad_prev, p_prev = grad, p

    return ProjectionResult(
        plan=plan.with_potentials(u, v),
        iterations=k,
        final_rho=rho,
        converged=rho <= eps,
        initial_rho=rho0,
        phi_evals=evals,
        line_searches=k,
        resets=resets,
        non_wolfe_steps=non_wolfe,
        elapsed_s=time.perf_counter() - start,
        trace=trace,
    )


def project(plan, m, eps, projector=Projector.PNCG, **kwargs):
    projector = Projector(projector)
    if projector is Projector.SINKHORN:
        kwargs.pop("c1", None)
        kwargs.pop("c2", None)
        kwargs.pop("direction_log", None)
        return sinkhorn_project(plan, m, eps, **kwargs)
    return pncg_project(plan, m, eps, variant=projector, **kwargs)

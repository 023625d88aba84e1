"""Mirror descent for optimal transport with warm-started Bregman projections."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    MDConfig,
    NumericalInstability,
    Projector,
    ScaledPlan,
    SolveTrace,
    gen_kl,
    log_plan,
    materialize,
)
from .projections import ProjectionResult, project
from .rounding import round_to_polytope

# Largest per-step size used by the default schedule.
STEP_CAP = 256.0
EPS_FLOOR = 1e-14


class ConvergenceError(RuntimeError):
    """A projection hit its iteration cap; ``result`` holds the partial projection."""

    def __init__(self, step, result):
        self.step = step
        self.result = result
        super().__init__(
            f"projection at MD step {step} did not reach rho <= eps within "
            f"{result.iterations} iterations (rho={result.final_rho:.3e})"
        )


@dataclass
class MDSolveReport:
    final_plan: ScaledPlan
    rounded_plan: np.ndarray
    objective: float
    unrounded_objective: float
    final_rho: float
    trace: SolveTrace
    config: MDConfig
    steps: list = field(default_factory=list)  # ProjectionResult per MD step
    elapsed_s: float = 0.0

    @property
    def iterations(self):
        return sum(s.iterations for s in self.steps)

    @property
    def phi_evals(self):
        return sum(s.phi_evals for s in self.steps)

    def to_dict(self):
        return {
            "objective": self.objective,
            "unrounded_objective": self.unrounded_objective,
            "final_rho": self.final_rho,
            "iterations": self.iterations,
            "phi_prime_evals": self.phi_evals,
            "steps": [
                {
                    "t": t,
                    "gamma_t": g,
                    "iterations": s.iterations,
                    "initial_rho": s.initial_rho,
                    "final_rho": s.final_rho,
                    "phi_prime_evals": s.phi_evals,
                    "resets": s.resets,
                    "elapsed_s": s.elapsed_s,
                }
                for t, (g, s) in enumerate(zip(self.config.schedule, self.steps), start=1)
            ],
            "elapsed_s": self.elapsed_s,
            "config": self.config.to_dict(),
        }


def step_schedule(gamma_bar, T=None):
    """Constant schedule; by default as many steps of at most 256 as ``gamma_bar`` needs.

    >>> step_schedule(1024)
    [256.0, 256.0, 256.0, 256.0]
    """
    if not gamma_bar > 0:
        raise ValueError("gamma_bar must be positive")
    if T is None:
        T = max(1, math.floor(gamma_bar / STEP_CAP))
    if T < 1:
        raise ValueError("T must be positive")
    return [gamma_bar / T] * T


def default_epsilon(hmin, gamma_bar):
    """min(1e-5, 1e-5 (H_min / gamma_bar)^2)."""
    if hmin < 0 or not gamma_bar > 0:
        raise ValueError("need hmin >= 0 and gamma_bar > 0")
    return min(1e-5, 1e-5 * (hmin / gamma_bar) ** 2)


def solver_epsilon(hmin, gamma_bar):
    """``default_epsilon`` floored so a degenerate marginal still yields a usable tolerance."""
    return max(default_epsilon(hmin, gamma_bar), EPS_FLOOR)


def initial_log_base(m, init="independent"):
    if init == "independent":
        return np.log(m.r)[:, None] + np.log(m.c)[None, :]
    if init == "ones":
        return np.zeros((m.n, m.n))
    raise ValueError(f"unknown init {init!r}")


def mdot(C, m, cfg, callback=None, step_callback=None, **proj_kwargs):
    """Run ``len(cfg.schedule)`` mirror-descent steps with warm-started projections.

    Step ``t`` projects ``P^{t-1} * exp(-gamma_t C)``. The projection starts
    from the potentials found at step ``t - 1`` (``cfg.warm_start ==
    "previous"``), i.e. it guesses that this step needs the same correction
    as the last one; ``"zero"`` starts from the unscaled matrix instead.

    ``step_callback(t, result)`` sees every projection result (its
    ``plan.log_base`` is the matrix projected at step ``t``); ``callback`` is
    forwarded to the projector as ``callback(t, k, u, v)``.

    Raises
    ------
    NumericalInstability
        With ``step`` and ``gamma`` set to the failing MD step.
    ConvergenceError
        When a projection exhausts ``cfg.max_proj_iters``.
    """
    C = np.asarray(C, dtype=np.float64)
    start = time.perf_counter()
    plan = ScaledPlan.from_base(initial_log_base(m, cfg.init))
    trace = SolveTrace()
    steps = []
    for t, gamma_t in enumerate(cfg.schedule, start=1):
        base = log_plan(plan.log_base, plan.u, plan.v) - gamma_t * C
        if cfg.warm_start == "previous":
            plan = ScaledPlan(base, plan.u, plan.v, gamma_t)
        else:
            plan = ScaledPlan.from_base(base, gamma=gamma_t)
        inner = None if callback is None else (lambda k, u, v, t=t: callback(t, k, u, v))
        try:
            result = project(plan, m, cfg.epsilon, cfg.projector,
                             max_iters=cfg.max_proj_iters, step=t, callback=inner, **proj_kwargs)
        except NumericalInstability as err:
            err.step = t
            err.args = (f"{err.args[0]} at MD step {t}",)
            raise
        trace.extend(result.trace)
        steps.append(result)
        if step_callback is not None:
            step_callback(t, result)
        if not result.converged:
            raise ConvergenceError(t, result)
        plan = result.plan

    P = materialize(plan)
    G = round_to_polytope(P, m)
    return MDSolveReport(
        final_plan=plan,
        rounded_plan=G,
        objective=float(np.sum(G * C)),
        unrounded_objective=float(np.sum(P * C)),
        final_rho=steps[-1].final_rho,
        trace=trace,
        config=cfg,
        steps=steps,
        elapsed_s=time.perf_counter() - start,
    )


def md_iterates(C, m, cfg, **proj_kwargs):
    """Materialized plan after every MD step, ``P^0`` included."""
    plans = [np.exp(initial_log_base(m, cfg.init))]
    kept = []

    def keep(t, result):
        kept.append(materialize(result.plan))

    mdot(C, m, cfg, step_callback=keep, **proj_kwargs)
    return plans + kept


def improvement_identity_check(prev_plan, next_plan, C, gamma_t):
    """Both sides of ``<P, C> - <P', C> = (KL(P|P') + KL(P'|P)) / gamma_t``."""
    prev_plan = np.asarray(prev_plan, dtype=np.float64).ravel()
    next_plan = np.asarray(next_plan, dtype=np.float64).ravel()
    C = np.asarray(C, dtype=np.float64).ravel()
    lhs = float(prev_plan @ C - next_plan @ C)
    rhs = (gen_kl(prev_plan, next_plan) + gen_kl(next_plan, prev_plan)) / gamma_t
    return lhs, rhs


def step_l1_bound(gamma_t, hmin, budget_so_far):
    """Cap on ``||P^{t+1} - P^t||_1`` given the budget already spent to reach ``P^t``."""
    if budget_so_far <= 0:
        return gamma_t
    return min(gamma_t, math.sqrt(hmin * gamma_t / budget_so_far))


def make_config(gamma_bar, epsilon, projector=Projector.PNCG, T=None, **kwargs):
    return MDConfig(gamma_bar=gamma_bar, schedule=step_schedule(gamma_bar, T),
                    epsilon=epsilon, projector=projector, **kwargs)

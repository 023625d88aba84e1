"""Numerical verification suite.

Each ``check_*`` function runs one self-contained experiment at desk scale
and returns a :class:`CheckResult` holding the measured quantity and the
bound it is compared against. :func:`run_checks` runs a selection and is
what ``mdot verify`` and the acceptance tests call.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import diagnostics, linesearch
from .core import (
    Marginals,
    NumericalInstability,
    Projector,
    ScaledPlan,
    dual_gradient,
    dual_objective,
    entropy,
    gen_kl,
    h_min,
    log_plan,
    materialize,
)
from .datagen import (
    SyntheticSpec,
    mnist_cost_matrix,
    mnist_pairs,
    mnist_to_distribution,
    parse_idx,
    raw_distances,
    sample_entropy_marginal,
    synthetic_instance,
)
from .mirror import (
    default_epsilon,
    improvement_identity_check,
    initial_log_base,
    make_config,
    md_iterates,
    mdot,
    solver_epsilon,
    step_l1_bound,
)
from .projections import pncg_project
from .rounding import round_to_polytope

MNIST_ENV = "MDOT_MNIST_IMAGES"
MNIST_DEFAULT_PATHS = (
    "train-images-idx3-ubyte",
    "data/train-images-idx3-ubyte",
    os.path.expanduser("~/.cache/mnist/train-images-idx3-ubyte"),
)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool | None  # None means skipped
    measured: float
    bound: float
    detail: str = ""
    elapsed_s: float = 0.0

    @property
    def status(self):
        if self.passed is None:
            return "SKIP"
        return "PASS" if self.passed else "FAIL"

    def line(self):
        return (f"[{self.status}] {self.number:2d} {self.name}: measured={self.measured:.4g} "
                f"bound={self.bound:.4g} ({self.elapsed_s:.1f}s) {self.detail}").rstrip()


def _random_marginals(rng, n, conc=1.0):
    r = rng.dirichlet(np.full(n, conc))
    c = rng.dirichlet(np.full(n, conc))
    r = np.maximum(r, 1e-6)
    c = np.maximum(c, 1e-6)
    return Marginals(r / r.sum(), c / c.sum())


def _random_state(rng, n, gamma=4.0):
    m = _random_marginals(rng, n)
    C = rng.random((n, n))
    base = initial_log_base(m) - gamma * C
    u = rng.normal(scale=0.5, size=n)
    v = rng.normal(scale=0.5, size=n)
    return ScaledPlan(base, u, v), m, C


def _uniform_instance(rng, n):
    C = rng.random((n, n))
    return C, Marginals.uniform(n)


# -- 1 -----------------------------------------------------------------------

def check_derivatives(seed=0, count=20, sizes=(4, 8, 16), h=1e-5):
    """Central differences of the dual objective and of its gradient."""
    rng = np.random.default_rng(seed)
    worst_g = worst_h = 0.0
    for i in range(count):
        n = sizes[i % len(sizes)]
        plan, m, _ = _random_state(rng, n)
        x = np.concatenate([plan.u, plan.v])

        def at(z):
            return plan.with_potentials(z[:n], z[n:])

        grad = np.concatenate(dual_gradient(plan, m))
        H = diagnostics.dual_hessian(plan, m)
        fd_g = np.empty(2 * n)
        fd_H = np.empty((2 * n, 2 * n))
        for j in range(2 * n):
            e = np.zeros(2 * n)
            e[j] = h
            fd_g[j] = (dual_objective(at(x + e), m) - dual_objective(at(x - e), m)) / (2 * h)
            fd_H[:, j] = (np.concatenate(dual_gradient(at(x + e), m))
                          - np.concatenate(dual_gradient(at(x - e), m))) / (2 * h)
        worst_g = max(worst_g, np.linalg.norm(fd_g - grad) / np.linalg.norm(grad))
        worst_h = max(worst_h, np.linalg.norm(fd_H - H) / np.linalg.norm(H))
    passed = worst_g <= 1e-6 and worst_h <= 1e-5
    return CheckResult(1, "gradient/Hessian finite differences", passed, max(worst_g, worst_h / 10),
                       1e-6, f"grad rel err {worst_g:.2e} (<=1e-6), Hessian rel err {worst_h:.2e} (<=1e-5)")


# -- 2 -----------------------------------------------------------------------

def check_descent_identity(seed=1, count=100):
    """<s, grad g> equals the symmetrised divergences of both marginals."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(count):
        n = int(rng.integers(3, 17))
        plan, m, _ = _random_state(rng, n)
        P = materialize(plan)
        a, b = P.sum(axis=1), P.sum(axis=0)
        lhs = float((np.log(a) - np.log(m.r)) @ (a - m.r) + (np.log(b) - np.log(m.c)) @ (b - m.c))
        rhs = gen_kl(a, m.r) + gen_kl(m.r, a) + gen_kl(b, m.c) + gen_kl(m.c, b)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    return CheckResult(2, "descent identity", worst <= 1e-12, worst, 1e-12)


# -- 3 -----------------------------------------------------------------------

def check_improvement_identity(seed=2, count=4, n=8, gamma_t=8.0, T=4, eps=1e-12):
    """Cost decrease between consecutive MD iterates equals the symmetrised KL over gamma_t."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        m = _random_marginals(rng, n)
        C = rng.random((n, n))
        cfg = make_config(gamma_t * T, eps, Projector.SINKHORN, T=T)
        plans = md_iterates(C, m, cfg)
        for prev, nxt in zip(plans[1:-1], plans[2:]):
            lhs, rhs = improvement_identity_check(prev, nxt, C, gamma_t)
            worst = max(worst, abs(lhs - rhs))
    return CheckResult(3, "MD improvement identity", worst <= 1e-6, worst, 1e-6)


# -- 4 -----------------------------------------------------------------------

def check_suboptimality(seed=3, count=16, sizes=(6, 8), budgets=(16.0, 64.0, 256.0)):
    """<P^T, C> - OPT <= H_min / gamma_bar against the assignment oracle."""
    rng = np.random.default_rng(seed)
    worst_slack = -math.inf
    oracle_err = 0.0
    for i in range(count):
        n = sizes[i % len(sizes)]
        C, m = _uniform_instance(rng, n)
        opt = diagnostics.exact_assignment_ot(C)
        if n == 6:
            oracle_err = max(oracle_err, abs(opt - diagnostics.brute_force_assignment_ot(C)))
        hm = h_min(m)
        for gb in budgets:
            rep = mdot(C, m, make_config(gb, solver_epsilon(hm, gb), Projector.PNCG))
            gap = max(rep.objective, rep.unrounded_objective) - opt
            worst_slack = max(worst_slack, gap - hm / gb)
    passed = worst_slack <= 0 and oracle_err <= 1e-12
    return CheckResult(4, "suboptimality bound", passed, worst_slack, 0.0,
                       f"max(gap - H_min/gamma_bar); oracle vs enumeration err {oracle_err:.1e}")


# -- 5, 6 --------------------------------------------------------------------

def _schedule_runs(seed, count, n, gamma_bar, Ts, eps):
    rng = np.random.default_rng(seed)
    runs = []
    for _ in range(count):
        m = _random_marginals(rng, n)
        C = rng.random((n, n))
        per_T = {T: md_iterates(C, m, make_config(gamma_bar, eps, Projector.SINKHORN, T=T)) for T in Ts}
        runs.append((m, per_T))
    return runs


def check_schedule_invariance(seed=4, count=4, n=8, gamma_bar=32.0, Ts=(1, 4, 16), eps=1e-12,
                              runs=None, tight_eps=1e-14):
    """Final plans agree whichever constant schedule splits gamma_bar.

    The same comparison is repeated at ``tight_eps`` and reported in the
    detail: with ``rho <= eps`` a plan's marginals are only pinned to about
    ``sqrt(2 eps)`` in L1, which bounds how closely two solves can agree.
    """
    runs = runs if runs is not None else _schedule_runs(seed, count, n, gamma_bar, Ts, eps)
    worst = _worst_pairwise(runs, Ts)
    tight = _worst_pairwise(_schedule_runs(seed, count, n, gamma_bar, Ts, tight_eps), Ts)
    return CheckResult(5, "schedule invariance", worst <= 1e-6, worst, 1e-6,
                       f"max pairwise L1; {tight:.2e} at eps={tight_eps:g}")


def _worst_pairwise(runs, Ts):
    worst = 0.0
    for _, per_T in runs:
        finals = [per_T[T][-1] for T in Ts]
        for i in range(len(finals)):
            for j in range(i + 1, len(finals)):
                worst = max(worst, float(np.abs(finals[i] - finals[j]).sum()))
    return worst


def check_step_bound(seed=4, count=4, n=8, gamma_bar=32.0, Ts=(1, 4, 16), eps=1e-12, runs=None):
    """||P^{t+1} - P^t||_1 against min(gamma_t, sqrt(H_min gamma_t / spent))."""
    runs = runs if runs is not None else _schedule_runs(seed, count, n, gamma_bar, Ts, eps)
    worst = -math.inf
    for m, per_T in runs:
        hm = h_min(m)
        for T, plans in per_T.items():
            gamma_t = gamma_bar / T
            for t in range(T):
                step = float(np.abs(plans[t + 1] - plans[t]).sum())
                bound = step_l1_bound(gamma_t, hm, gamma_t * t)
                worst = max(worst, step / bound)
    return CheckResult(6, "per-step L1 bound", worst <= 1.0, worst, 1.0, "max ratio step / bound")


# -- 7 -----------------------------------------------------------------------

def check_contraction(seed=5, count=8, n=8, gamma=4.0, steps=4, eps=1e-13):
    """Sinkhorn iterates inside each MD step obey the Hilbert-metric contraction bound."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        m = _random_marginals(rng, n)
        C = rng.random((n, n))
        inner = {}

        def record(t, k, u, v):
            inner.setdefault(t, []).append((k, u, v))

        def check(t, result):
            nonlocal worst
            pts = diagnostics.contraction_bound_check(
                t, gamma, C, result.plan.log_base, inner[t], result.plan.u, result.plan.v, m)
            for _, lhs, rhs in pts:
                worst = max(worst, lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf))

        mdot(C, m, make_config(gamma * steps, eps, Projector.SINKHORN, T=steps),
             callback=record, step_callback=check)
    return CheckResult(7, "Hilbert-metric contraction", worst <= 1.0, worst, 1.0, "max lhs / rhs")


# -- 8 -----------------------------------------------------------------------

def check_rounding(seed=6, count=100):
    rng = np.random.default_rng(seed)
    worst_marg = 0.0
    worst_ratio = 0.0
    for _ in range(count):
        n = int(rng.integers(2, 33))
        m = _random_marginals(rng, n)
        G0 = np.outer(m.r, m.c)
        F = G0 * np.exp(rng.normal(scale=10 ** rng.uniform(-4, -1), size=(n, n)))
        G = round_to_polytope(F, m)
        worst_marg = max(worst_marg, np.abs(G.sum(axis=1) - m.r).max(), np.abs(G.sum(axis=0) - m.c).max())
        if G.min() < 0:
            worst_marg = math.inf
        bound = 2 * (np.abs(F.sum(axis=1) - m.r).sum() + np.abs(F.sum(axis=0) - m.c).sum())
        worst_ratio = max(worst_ratio, np.abs(G - F).sum() / bound)
    passed = worst_marg <= 1e-12 and worst_ratio <= 1.0
    return CheckResult(8, "rounding", passed, worst_marg, 1e-12,
                       f"L1 perturbation / bound max {worst_ratio:.3f} (<=1)")


# -- 9 -----------------------------------------------------------------------

def check_line_search(seed=7, n=128, fraction=0.9, gamma_bar=256.0, eps=1e-9):
    """Post-hoc approximate Wolfe test of every accepted step of a full PNCG projection."""
    inst = synthetic_instance(SyntheticSpec(n, 4, fraction, seed=seed))
    m = inst.marginals
    plan = ScaledPlan.from_base(initial_log_base(m) - gamma_bar * inst.C, gamma=gamma_bar)
    iterates = []
    directions = []
    res = pncg_project(plan, m, eps, callback=lambda k, u, v: iterates.append((u, v)),
                       direction_log=directions)
    violations = 0
    for (u0, v0), (u1, v1), (_, p, _, _) in zip(iterates[:-1], iterates[1:], directions):
        pvec = np.concatenate(p)
        step = np.concatenate([u1 - u0, v1 - v0])
        alpha = float(step @ pvec / (pvec @ pvec))
        d0 = _directional(plan.log_base, u0, v0, p, m)
        d1 = _directional(plan.log_base, u1, v1, p, m)
        if not linesearch.approximate_wolfe(d1, d0):
            violations += 1
        if not alpha > 0:
            violations += 1
    mean_evals = res.phi_evals / max(res.line_searches, 1)
    passed = res.converged and violations == 0 and mean_evals <= 6.0
    return CheckResult(9, "line search", passed, mean_evals, 6.0,
                       f"{res.line_searches} searches, {violations} Wolfe violations")


def _directional(log_base, u, v, p, m):
    P = np.exp(log_plan(log_base, u, v))
    return float(p[0] @ (P.sum(axis=1) - m.r) + p[1] @ (P.sum(axis=0) - m.c))


# -- 10 ----------------------------------------------------------------------

def check_pncg_speedup(seeds=range(8), n=256, fraction=0.9, gamma_bar=256.0, T=1, eps=1e-9):
    ratios = []
    all_fewer = True
    for seed in seeds:
        inst = synthetic_instance(SyntheticSpec(n, 4, fraction, seed=seed))
        counts = {}
        for proj in (Projector.SINKHORN, Projector.PNCG):
            rep = mdot(inst.C, inst.marginals, make_config(gamma_bar, eps, proj, T=T))
            counts[proj] = rep.iterations
        all_fewer &= counts[Projector.PNCG] <= counts[Projector.SINKHORN]
        ratios.append(counts[Projector.SINKHORN] / counts[Projector.PNCG])
    mean = float(np.mean(ratios))
    return CheckResult(10, "PNCG vs Sinkhorn iterations", all_fewer and mean >= 3.0, mean, 3.0,
                       "mean Sinkhorn/PNCG ratio; per instance " + ", ".join(f"{r:.1f}" for r in ratios))


# -- 11 ----------------------------------------------------------------------

def preconditioning_gains(fraction, seeds=range(8), n=32, gamma_bar=32.0, eps=1e-12, first=50):
    """Per-instance mean gain over the first ``first`` PNCG iterates of a single-step solve."""
    means = []
    for seed in seeds:
        inst = synthetic_instance(SyntheticSpec(n, 4, fraction, seed=seed))
        m = inst.marginals
        base = initial_log_base(m) - gamma_bar * inst.C
        gains = []

        def record(t, k, u, v):
            if k >= 1 and len(gains) < first:
                try:
                    gains.append(diagnostics.preconditioning_gain(ScaledPlan(base, u, v), m))
                except diagnostics.DegenerateSpectrum:
                    pass

        mdot(inst.C, m, make_config(gamma_bar, eps, Projector.PNCG, T=1), callback=record)
        means.append(float(np.mean(gains)))
    return means


def check_preconditioning(fractions=(0.2, 0.4, 0.6, 0.8), seeds=range(8)):
    per_level = [preconditioning_gains(f, seeds) for f in fractions]
    means = [float(np.mean(g)) for g in per_level]
    above = all(min(g) > 1.0 for g in per_level)
    monotone = all(a >= b for a, b in zip(means, means[1:]))
    return CheckResult(11, "preconditioning gain", above and monotone, min(means), 1.0,
                       "mean gain by entropy " + ", ".join(f"{f}:{g:.3g}" for f, g in zip(fractions, means))
                       + ("" if monotone else " (not monotone)"))


# -- 12 ----------------------------------------------------------------------

def check_warm_start(seeds=range(8), n=128, fraction=0.9, gamma_bar=512.0, Ts=(4, 16), eps=1e-10):
    worst = 0.0
    for T in Ts:
        for seed in seeds:
            inst = synthetic_instance(SyntheticSpec(n, 4, fraction, seed=seed))
            rep = mdot(inst.C, inst.marginals, make_config(gamma_bar, eps, Projector.PNCG, T=T))
            worst = max(worst, rep.steps[-1].initial_rho / rep.steps[0].initial_rho)
    return CheckResult(12, "warm-start trend", worst < 1.0, worst, 1.0, "max rho0(last) / rho0(first)")


# -- 13 ----------------------------------------------------------------------

def check_instability(seed=0, n=64, fraction=0.5, gamma_bar=4096.0, eps=1e-9):
    inst = synthetic_instance(SyntheticSpec(n, 4, fraction, seed=seed))
    notes = []
    ok = True
    for proj in (Projector.SINKHORN, Projector.PNCG):
        try:
            mdot(inst.C, inst.marginals, make_config(gamma_bar, eps, proj, T=1))
            ok = False
            notes.append(f"{proj.value}: single step did not fail")
        except NumericalInstability as err:
            ok &= err.gamma == gamma_bar
        rep = mdot(inst.C, inst.marginals, make_config(gamma_bar, eps, proj))
        ok &= rep.final_rho <= eps
        notes.append(f"{proj.value}: split T={rep.config.T} rho={rep.final_rho:.1e}")
    return CheckResult(13, "instability boundary", ok, gamma_bar, 256.0, "; ".join(notes))


# -- 14 ----------------------------------------------------------------------

def check_generator(seed=8, n=512, m=4, fractions=(0.2, 0.5, 0.8, 0.9), tolerance=0.01):
    D = raw_distances(n, m, seed)
    off = D[~np.eye(n, dtype=bool)]
    rel = abs(off.mean() - math.sqrt(2.0)) / math.sqrt(2.0)
    worst = 0.0
    for i, f in enumerate(fractions):
        w = sample_entropy_marginal(n, f * math.log(n), tolerance, seed + 1 + i)
        worst = max(worst, abs(entropy(w) - f * math.log(n)))
    passed = rel <= 0.05 and worst <= tolerance
    return CheckResult(14, "generator statistics", passed, rel, 0.05,
                       f"distance mean {off.mean():.4f}; worst entropy miss {worst:.4f} (<= {tolerance})")


# -- 15 ----------------------------------------------------------------------

def find_mnist(path=None):
    candidates = [path] if path else [os.environ.get(MNIST_ENV), *MNIST_DEFAULT_PATHS]
    for p in candidates:
        if p and os.path.isfile(p):
            return p
    return None


def check_mnist(path=None, seed=0, pairs=4, gamma_bar=256.0, sample=256):
    found = find_mnist(path)
    if found is None:
        return CheckResult(15, "MNIST pipeline", None, math.nan, 0.08,
                           f"images file not found (set {MNIST_ENV})")
    images = parse_idx(found)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(images), size=min(sample, len(images)), replace=False)
    fracs = [nats_fraction(mnist_to_distribution(images[i], rng)) for i in idx]
    deviation = abs(float(np.mean(fracs)) - 0.73)
    C = mnist_cost_matrix()
    ok = deviation <= 0.08
    worst_rho = 0.0
    for _, _, r, c in mnist_pairs(images, pairs, seed):
        m = Marginals(r, c)
        eps = default_epsilon(h_min(m), gamma_bar)
        rep = mdot(C, m, make_config(gamma_bar, eps, Projector.PNCG))
        ok &= rep.final_rho <= eps
        worst_rho = max(worst_rho, rep.final_rho / eps)
    return CheckResult(15, "MNIST pipeline", ok, deviation, 0.08,
                       f"mean entropy fraction {np.mean(fracs):.3f}; max rho/eps {worst_rho:.2f}")


def nats_fraction(w):
    return entropy(w) / math.log(len(w))


def check_schedule_pair(seed=4, count=4, n=8, gamma_bar=32.0, Ts=(1, 4, 16), eps=1e-12):
    runs = _schedule_runs(seed, count, n, gamma_bar, Ts, eps)
    return [check_schedule_invariance(runs=runs, Ts=Ts), check_step_bound(runs=runs, gamma_bar=gamma_bar, Ts=Ts)]


CHECKS = {
    1: check_derivatives,
    2: check_descent_identity,
    3: check_improvement_identity,
    4: check_suboptimality,
    5: check_schedule_invariance,
    6: check_step_bound,
    7: check_contraction,
    8: check_rounding,
    9: check_line_search,
    10: check_pncg_speedup,
    11: check_preconditioning,
    12: check_warm_start,
    13: check_instability,
    14: check_generator,
    15: check_mnist,
}

# Criteria that take well under a second each.
QUICK = (1, 2, 3, 5, 6, 7, 8, 14)


def run_checks(numbers=None, mnist_path=None, report=None):
    """Run the selected checks in order; ``report(result)`` is called after each."""
    numbers = sorted(CHECKS) if numbers is None else sorted(numbers)
    results = []
    shared = None
    for num in numbers:
        start = time.perf_counter()
        if num in (5, 6):
            if shared is None:
                shared = check_schedule_pair()
            res = shared[num - 5]
        elif num == 15:
            res = check_mnist(mnist_path)
        else:
            res = CHECKS[num]()
        res.elapsed_s = time.perf_counter() - start
        results.append(res)
        if report is not None:
            report(res)
    return results

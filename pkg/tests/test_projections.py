import numpy as np
import pytest

from mdot import Marginals, NumericalInstability, Projector, ScaledPlan, materialize
from mdot import linesearch
from mdot.core import infeasibility
from mdot.linesearch import LineSearchError, approximate_wolfe, hybrid_step, secant_step
from mdot.mirror import initial_log_base
from mdot.projections import (
    beta_pr,
    beta_ppr,
    line_search,
    phi_prime,
    pncg_project,
    project,
    sinkhorn_project,
)

from conftest import random_marginals, random_plan


def scaling_oracle(K, r, c, sweeps):
    """Plain alternating matrix scaling, written independently of the package."""
    x = np.ones(len(r))
    y = np.ones(len(c))
    for _ in range(sweeps):
        x = r / (K @ y)
        y = c / (K.T @ x)
    return x[:, None] * K * y[None, :]


def base_plan(rng, n, gamma):
    m = random_marginals(rng, n)
    C = rng.random((n, n))
    return ScaledPlan.from_base(initial_log_base(m) - gamma * C, gamma=gamma), m, C


class TestLineSearchPrimitives:
    def test_wolfe_window(self):
        # c1 = 0.1, c2 = 0.5 with phi'(0) = -1 accepts phi'(alpha) in [-0.5, 0.8]
        assert approximate_wolfe(-0.5, -1.0)
        assert approximate_wolfe(0.8, -1.0)
        assert not approximate_wolfe(-0.6, -1.0)
        assert not approximate_wolfe(0.81, -1.0)

    def test_secant_exact_for_linear_derivative(self):
        assert secant_step(0.0, 4.0, -2.0, 2.0) == pytest.approx(2.0)
        assert hybrid_step(0.0, 4.0, -2.0, 2.0) == pytest.approx(2.0)

    def test_quadratic(self):
        # phi(a) = (a - 3)^2 / 2 with phi'(0) = -3; doubling hits 4 where phi' = 1
        res = linesearch.line_search(lambda a: (a - 3.0, None), -3.0)
        assert approximate_wolfe(res.phi_prime, -3.0)
        assert res.evals <= 3
        assert res.wolfe

    def test_not_descent(self):
        with pytest.raises(LineSearchError):
            linesearch.line_search(lambda a: (1.0, None), 0.5)

    def test_unbounded_direction(self):
        with pytest.raises(LineSearchError):
            linesearch.line_search(lambda a: (-1.0, None), -1.0, max_expansions=10)

    def test_overflow_treated_as_overshoot(self):
        def dphi(a):
            if a > 1.5:
                raise NumericalInstability("too far")
            return a - 1.2, None

        res = linesearch.line_search(dphi, -1.2)
        assert res.alpha <= 1.5
        assert approximate_wolfe(res.phi_prime, -1.2)

    def test_ceiling_fallback(self):
        # descent everywhere below the overflow point: last good step is returned
        def dphi(a):
            if a > 1.0:
                raise NumericalInstability("too far")
            return -1.0, a

        res = linesearch.line_search(dphi, -1.0)
        assert not res.wolfe
        assert 0.999 <= res.alpha <= 1.0
        assert res.payload == res.alpha

    def test_bad_constants(self):
        with pytest.raises(ValueError):
            linesearch.line_search(lambda a: (a - 1, None), -1.0, c1=0.6, c2=0.9)


class TestBeta:
    def test_ppr_reduces_to_classic_form(self, rng):
        g0 = (rng.normal(size=3), rng.normal(size=3))
        g1 = (rng.normal(size=3), rng.normal(size=3))
        s0 = (rng.normal(size=3), rng.normal(size=3))
        s1 = (rng.normal(size=3), rng.normal(size=3))
        p0 = (-s0[0], -s0[1])
        expected = ((g1[0] - g0[0]) @ s1[0] + (g1[1] - g0[1]) @ s1[1]) / (g0[0] @ s0[0] + g0[1] @ s0[1])
        assert beta_ppr(g1, g0, s1, p0) == pytest.approx(expected, rel=1e-14)

    def test_ppr_hand_value(self):
        g0 = (np.array([1.0]), np.array([0.0]))
        g1 = (np.array([3.0]), np.array([1.0]))
        s1 = (np.array([2.0]), np.array([4.0]))
        p0 = (np.array([-1.0]), np.array([-1.0]))
        # <(2, 1), (2, 4)> / -<(1, 0), (-1, -1)> = 8 / 1
        assert beta_ppr(g1, g0, s1, p0) == pytest.approx(8.0)

    def test_zero_denominator(self):
        z = (np.zeros(2), np.zeros(2))
        assert beta_ppr(z, z, z, z) is None
        assert beta_pr(z, z) is None

    def test_pr_hand_value(self):
        g0 = (np.array([1.0]), np.array([1.0]))
        g1 = (np.array([2.0]), np.array([0.0]))
        # <(1, -1), (2, 0)> / 2
        assert beta_pr(g1, g0) == pytest.approx(1.0)


class TestPhiPrime:
    def test_matches_directional_derivative(self, rng):
        plan, m, _ = random_plan(rng, 5)
        p = (rng.normal(size=5), rng.normal(size=5))
        P = materialize(plan)
        expected = p[0] @ (P.sum(1) - m.r) + p[1] @ (P.sum(0) - m.c)
        assert phi_prime(0.0, p, plan, m) == pytest.approx(expected, rel=1e-14)

    def test_zero_at_exact_minimizer(self, rng):
        plan, m, _ = base_plan(rng, 5, 4.0)
        s = np.log(materialize(plan).sum(1)) - np.log(m.r)
        p = (-s, np.zeros(5))
        # a full row step is the exact minimizer along a pure-row direction
        assert phi_prime(1.0, p, plan, m) == pytest.approx(0.0, abs=1e-15)
        res = line_search(p, plan, m)
        assert approximate_wolfe(res.phi_prime, phi_prime(0.0, p, plan, m))


class TestSinkhorn:
    def test_already_feasible(self, rng):
        m = random_marginals(rng, 4)
        plan = ScaledPlan.from_base(initial_log_base(m))
        res = sinkhorn_project(plan, m, 1e-12)
        assert res.iterations == 0 and res.converged
        np.testing.assert_array_equal(res.plan.u, plan.u)

    def test_rows_exact_after_odd_step(self, rng):
        plan, m, _ = base_plan(rng, 6, 8.0)
        res = sinkhorn_project(plan, m, 1e-30, max_iters=3)
        np.testing.assert_allclose(materialize(res.plan).sum(1), m.r, rtol=1e-14)
        assert not res.converged

    @pytest.mark.parametrize("eps", [1e-10, 1e-15])
    def test_matches_scaling_oracle(self, rng, eps):
        plan, m, C = base_plan(rng, 4, 8.0)
        res = sinkhorn_project(plan, m, eps)
        ref = scaling_oracle(np.exp(plan.log_base), m.r, m.c, 128)
        # rho <= eps only pins the marginals to about sqrt(2 eps) in L1
        assert np.abs(materialize(res.plan) - ref).sum() <= 2 * np.sqrt(2 * eps)
        assert res.final_rho <= eps

    def test_trace_and_callback(self, rng):
        plan, m, _ = base_plan(rng, 4, 4.0)
        seen = []
        res = sinkhorn_project(plan, m, 1e-8, callback=lambda k, u, v: seen.append(k), step=3)
        assert seen == list(range(res.iterations + 1))
        assert [row.t for row in res.trace.rows] == [3] * (res.iterations + 1)
        assert res.trace.rows[0].rho == res.initial_rho

    def test_warm_start_honoured(self, rng):
        plan, m, _ = base_plan(rng, 5, 4.0)
        first = sinkhorn_project(plan, m, 1e-12)
        again = sinkhorn_project(first.plan, m, 1e-12)
        assert again.iterations == 0

    def test_overflow(self):
        m = Marginals.uniform(2)
        plan = ScaledPlan.from_base(np.array([[0.0, -1000.0], [-1000.0, -1000.0]]), gamma=4096.0)
        with pytest.raises(NumericalInstability):
            sinkhorn_project(plan, m, 1e-9)


class TestPNCG:
    @pytest.mark.parametrize("variant", [Projector.PNCG, Projector.NCG])
    def test_agrees_with_sinkhorn(self, rng, variant):
        plan, m, _ = base_plan(rng, 8, 8.0)
        a = sinkhorn_project(plan, m, 1e-13)
        b = pncg_project(plan, m, 1e-13, variant=variant)
        assert b.converged
        assert np.abs(materialize(a.plan) - materialize(b.plan)).sum() <= 1e-6

    def test_fewer_iterations_than_sinkhorn(self, rng):
        plan, m, _ = base_plan(rng, 32, 32.0)
        a = sinkhorn_project(plan, m, 1e-10)
        b = pncg_project(plan, m, 1e-10)
        assert b.iterations < a.iterations

    def test_every_step_is_wolfe(self, rng):
        plan, m, _ = base_plan(rng, 16, 16.0)
        pts = []
        dirs = []
        res = pncg_project(plan, m, 1e-11, callback=lambda k, u, v: pts.append((u, v)), direction_log=dirs)
        assert res.non_wolfe_steps == 0
        for (u0, v0), (u1, v1), (_, p, _, _) in zip(pts, pts[1:], dirs):
            d0 = phi_prime(0.0, p, plan.with_potentials(u0, v0), m)
            d1 = phi_prime(0.0, p, plan.with_potentials(u1, v1), m)
            assert d0 < 0
            assert approximate_wolfe(d1, d0)

    def test_first_direction_is_negative_sinkhorn(self, rng):
        plan, m, _ = base_plan(rng, 6, 4.0)
        dirs = []
        pncg_project(plan, m, 1e-9, direction_log=dirs)
        k, p, s, reset = dirs[0]
        assert k == 1 and reset
        np.testing.assert_array_equal(p[0], -s[0])

    def test_rho_trace_is_recorded(self, rng):
        plan, m, _ = base_plan(rng, 6, 4.0)
        res = pncg_project(plan, m, 1e-9)
        rhos = [row.rho for row in res.trace.rows]
        assert rhos[0] == res.initial_rho and rhos[-1] == res.final_rho
        assert res.phi_evals == sum(row.phi_evals for row in res.trace.rows)
        assert infeasibility(materialize(res.plan), m) == pytest.approx(res.final_rho, rel=1e-6)

    def test_iteration_cap(self, rng):
        plan, m, _ = base_plan(rng, 6, 16.0)
        res = pncg_project(plan, m, 1e-14, max_iters=2)
        assert res.iterations == 2 and not res.converged

    def test_rejects_sinkhorn_variant(self, rng):
        plan, m, _ = base_plan(rng, 3, 1.0)
        with pytest.raises(ValueError):
            pncg_project(plan, m, 1e-9, variant=Projector.SINKHORN)


def test_project_dispatch(rng):
    plan, m, _ = base_plan(rng, 5, 4.0)
    a = project(plan, m, 1e-10, "sinkhorn", c1=0.1, c2=0.5)
    b = project(plan, m, 1e-10, "pncg")
    assert a.phi_evals == 0 and b.phi_evals > 0
    assert np.abs(materialize(a.plan) - materialize(b.plan)).sum() < 1e-4

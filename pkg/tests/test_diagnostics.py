import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mdot import ScaledPlan, materialize
from mdot.diagnostics import (
    DegenerateSpectrum,
    brute_force_assignment_ot,
    contraction_bound_check,
    contraction_rate,
    dual_hessian,
    exact_assignment_ot,
    hilbert_metric,
    preconditioner_diagonal,
    preconditioning_gain,
    pseudo_condition_number,
    spectrum,
    var_norm,
)
from mdot.mirror import initial_log_base
from mdot.projections import sinkhorn_project

from conftest import random_marginals, random_plan


class TestAssignment:
    def test_hand_value(self):
        C = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        assert exact_assignment_ot(C) == 0.0
        C2 = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert exact_assignment_ot(C2) == pytest.approx(0.15)

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6, 7])
    def test_matches_enumeration(self, rng, n):
        for _ in range(3):
            C = rng.random((n, n))
            assert exact_assignment_ot(C) == pytest.approx(brute_force_assignment_ot(C), abs=1e-15)

    def test_enumeration_cap(self):
        with pytest.raises(ValueError):
            brute_force_assignment_ot(np.zeros((10, 10)))


class TestHessian:
    def test_block_structure(self, rng):
        plan, m, _ = random_plan(rng, 4)
        H = dual_hessian(plan, m)
        P = materialize(plan)
        np.testing.assert_allclose(H[:4, 4:], P)
        np.testing.assert_allclose(np.diag(H[:4, :4]), P.sum(1))
        np.testing.assert_array_equal(H, H.T)

    def test_psd_with_null_direction(self, rng):
        for _ in range(10):
            plan, m, _ = random_plan(rng, int(rng.integers(2, 12)))
            H = dual_hessian(plan, m)
            lam = spectrum(H)
            assert lam[0] >= -1e-10
            n = plan.u.size
            null = np.concatenate([np.ones(n), -np.ones(n)])
            np.testing.assert_allclose(H @ null, 0.0, atol=1e-14)

    def test_finite_differences(self, rng):
        from mdot import dual_gradient

        plan, m, _ = random_plan(rng, 5)
        H = dual_hessian(plan, m)
        x = np.concatenate([plan.u, plan.v])
        h = 1e-6
        fd = np.empty_like(H)
        for j in range(10):
            e = np.zeros(10)
            e[j] = h
            gp = np.concatenate(dual_gradient(plan.with_potentials(*np.split(x + e, 2)), m))
            gm = np.concatenate(dual_gradient(plan.with_potentials(*np.split(x - e, 2)), m))
            fd[:, j] = (gp - gm) / (2 * h)
        assert np.linalg.norm(fd - H) / np.linalg.norm(H) <= 1e-5

    def test_size_cap(self, rng):
        m = random_marginals(rng, 65)
        with pytest.raises(ValueError):
            dual_hessian(ScaledPlan.from_base(initial_log_base(m)), m)


class TestConditioning:
    def test_padded_identity(self):
        H = np.diag([0.0, 1.0, 1.0, 1.0])
        assert pseudo_condition_number(H) == pytest.approx(1.0)

    def test_hand_value(self):
        assert pseudo_condition_number(np.diag([0.0, 2.0, 8.0])) == pytest.approx(4.0)
        assert pseudo_condition_number(np.diag([0.0, 2.0, 8.0]), precond=[1.0, 4.0, 1.0]) == pytest.approx(1.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateSpectrum):
            pseudo_condition_number(np.diag([0.0, 0.0, 1.0]))

    def test_bad_precond(self):
        with pytest.raises(ValueError):
            spectrum(np.eye(2), precond=[1.0, -1.0])

    def test_similarity(self, rng):
        A = rng.normal(size=(6, 6))
        H = A @ A.T
        d = rng.random(6) + 0.1
        lam = spectrum(H, d)
        ref = np.sort(np.linalg.eigvals(np.diag(d) @ H).real)
        np.testing.assert_allclose(lam, ref, rtol=1e-10)
        np.testing.assert_array_equal(spectrum(H, d), lam)

    def test_preconditioner_limit(self):
        m = random_marginals(np.random.default_rng(0), 4)
        plan = ScaledPlan.from_base(initial_log_base(m))
        np.testing.assert_allclose(preconditioner_diagonal(plan, m), np.concatenate([1 / m.r, 1 / m.c]))

    def test_gain_above_one_on_skewed_marginals(self):
        from mdot.datagen import SyntheticSpec, synthetic_instance

        inst = synthetic_instance(SyntheticSpec(16, 4, 0.3, seed=0))
        m = inst.marginals
        plan = ScaledPlan.from_base(initial_log_base(m) - 16 * inst.C)
        assert preconditioning_gain(plan, m) > 1


class TestHilbert:
    def test_examples(self):
        assert hilbert_metric([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert hilbert_metric([3.0, 6.0], [1.0, 2.0]) == pytest.approx(0.0, abs=1e-15)
        assert hilbert_metric([1.0, math.e ** 2], [1.0, 1.0]) == pytest.approx(2.0)
        assert var_norm(np.array([3.0, -1.0, 2.0])) == 4.0

    def test_domain(self):
        with pytest.raises(ValueError):
            hilbert_metric([0.0, 1.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            hilbert_metric([1.0], [1.0, 1.0])

    @given(st.integers(1, 8).flatmap(
        lambda n: st.tuples(*[arrays(np.float64, n, elements=st.floats(1e-3, 1e3))] * 3)))
    @settings(max_examples=60, deadline=None)
    def test_triangle(self, vecs):
        p, q, w = vecs
        assert hilbert_metric(p, w) <= hilbert_metric(p, q) + hilbert_metric(q, w) + 1e-9

    def test_rate_monotone(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        rates = [contraction_rate(4.0, t, C) for t in range(1, 6)]
        assert all(a < b < 1 for a, b in zip(rates, rates[1:]))
        assert contraction_rate(4.0, 1, C) == pytest.approx(math.tanh(2.0))


class TestContractionCheck:
    def test_first_step(self, rng):
        m = random_marginals(rng, 8)
        C = rng.random((8, 8))
        base = initial_log_base(m) - 4.0 * C
        plan = ScaledPlan.from_base(base, gamma=4.0)
        inner = []
        ref = sinkhorn_project(plan, m, 1e-13, callback=lambda k, u, v: inner.append((k, u, v)))
        pts = contraction_bound_check(1, 4.0, C, base, inner, ref.plan.u, ref.plan.v, m)
        assert len(pts) == ref.iterations
        assert all(lhs <= rhs for _, lhs, rhs in pts)
        assert pts[-1][1] < 1e-6 * pts[0][1]

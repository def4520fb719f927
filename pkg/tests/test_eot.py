"""Tests for entropic and exact optimal transport."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dptraj.core import ParameterError, derive_rng
from dptraj.eot import (CapacityError, ChainConsistencyError, TransportPlan,
                        barycentric_project, compose_plans, exact_ot,
                        half_sqdist_cost, plan_from_dict, plan_to_dict,
                        read_plans, sinkhorn, write_plans)


def _instance(seed, n=6, m=5, d=2):
    rng = derive_rng(seed, (0,))
    x = rng.standard_normal((n, d))
    y = rng.standard_normal((m, d)) + 0.3
    a = rng.random(n) + 0.5
    b = rng.random(m) + 0.5
    return x, a / a.sum(), y, b / b.sum()


class TestCost:
    def test_half_squared_distances(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        y = np.array([[0.0, 2.0]])
        np.testing.assert_allclose(half_sqdist_cost(x, y), [[2.0], [2.5]])

    def test_diagonal_zero(self):
        x = derive_rng(1, (0,)).standard_normal((4, 3))
        np.testing.assert_allclose(np.diag(half_sqdist_cost(x, x)), 0.0,
                                   atol=1e-12)


class TestSinkhorn:
    def test_marginals_within_tolerance(self):
        x, a, y, b = _instance(3)
        plan = sinkhorn(x, a, y, b, eps=0.05, tol=1e-9)
        assert plan.converged
        assert np.abs(plan.gamma.sum(axis=1) - a).max() <= 1e-9
        assert np.abs(plan.gamma.sum(axis=0) - b).max() <= 1e-9

    def test_matches_exact_value_at_small_eps(self):
        x, a, y, b = _instance(5)
        ent = sinkhorn(x, a, y, b, eps=1e-3)
        lp = exact_ot(x, a, y, b)
        assert ent.transport_cost() == pytest.approx(lp.transport_cost(),
                                                     abs=1e-2)

    def test_large_eps_tends_to_product_coupling(self):
        x, a, y, b = _instance(7)
        plan = sinkhorn(x, a, y, b, eps=1e4)
        np.testing.assert_allclose(plan.gamma, np.outer(a, b), atol=1e-4)

    def test_duals_satisfy_normalization(self):
        x, a, y, b = _instance(9)
        plan = sinkhorn(x, a, y, b, eps=0.1)
        assert float(plan.phi.mean()) == pytest.approx(0.0, abs=1e-12)

    def test_warm_start_replays_to_same_plan(self):
        x, a, y, b = _instance(11)
        cold = sinkhorn(x, a, y, b, eps=0.05)
        warm = sinkhorn(x, a, y, b, eps=0.05, warm=(cold.phi, cold.psi))
        np.testing.assert_allclose(warm.gamma, cold.gamma, atol=1e-8)

    def test_rejects_nonpositive_eps(self):
        x, a, y, b = _instance(13)
        with pytest.raises(ParameterError):
            sinkhorn(x, a, y, b, eps=0.0)

    def test_rejects_nonpositive_weights(self):
        x, a, y, b = _instance(15)
        a = a.copy()
        a[0] = 0.0
        with pytest.raises(ParameterError):
            sinkhorn(x, a, y, b, eps=0.1)

    def test_entropic_value_dominates_transport_cost(self):
        x, a, y, b = _instance(17)
        plan = sinkhorn(x, a, y, b, eps=0.2)
        # KL(gamma | a x b) >= 0
        assert plan.entropic_value() >= plan.transport_cost() - 1e-12

    @given(seed=st.integers(0, 200))
    @settings(max_examples=20, deadline=None)
    def test_feasibility_property(self, seed):
        rng = derive_rng(seed, (1,))
        n, m = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        x = rng.standard_normal((n, 2))
        y = rng.standard_normal((m, 2))
        a = np.full(n, 1.0 / n)
        b = np.full(m, 1.0 / m)
        plan = sinkhorn(x, a, y, b, eps=0.05)
        assert np.all(plan.gamma >= 0)
        assert np.abs(plan.gamma.sum(axis=1) - a).max() <= 1e-6
        assert np.abs(plan.gamma.sum(axis=0) - b).max() <= 1e-6


class TestExactOt:
    def test_identity_instance_has_zero_cost(self):
        x = derive_rng(2, (0,)).standard_normal((5, 2))
        a = np.full(5, 0.2)
        plan = exact_ot(x, a, x, a)
        assert plan.transport_cost() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_equal_sizes_yields_permutation(self):
        x, _, y, _ = _instance(19, n=6, m=6)
        a = np.full(6, 1.0 / 6.0)
        plan = exact_ot(x, a, y, a)
        # vertex of the Birkhoff polytope: one entry per row/column
        assert np.all(np.sort(np.count_nonzero(plan.gamma, axis=1)) == 1)
        assert np.all(np.sort(np.count_nonzero(plan.gamma, axis=0)) == 1)

    def test_lp_branch_matches_assignment_on_uniform_instance(self):
        x, _, y, _ = _instance(21, n=5, m=5)
        a = np.full(5, 0.2)
        b_pert = a + np.array([1e-13, -1e-13, 0.0, 0.0, 0.0])  # not "uniform"
        assign = exact_ot(x, a, y, a)
        lp = exact_ot(x, a, y, b_pert / b_pert.sum())
        assert lp.transport_cost() == pytest.approx(assign.transport_cost(),
                                                    abs=1e-8)

    def test_marginals_exact(self):
        x, a, y, b = _instance(23, n=7, m=4)
        plan = exact_ot(x, a, y, b)
        np.testing.assert_allclose(plan.gamma.sum(axis=1), a, atol=1e-9)
        np.testing.assert_allclose(plan.gamma.sum(axis=0), b, atol=1e-9)

    def test_capacity_cap(self):
        n = 1001
        x = np.zeros((n, 1))
        a = np.full(n, 1.0 / n)
        with pytest.raises(CapacityError):
            exact_ot(x, a, x, a)

    def test_1d_sorted_instance_is_monotone_matching(self):
        x = np.array([[0.0], [1.0], [2.0]])
        y = np.array([[0.1], [1.1], [2.1]])
        a = np.full(3, 1.0 / 3.0)
        plan = exact_ot(x, a, y, a)
        np.testing.assert_allclose(plan.gamma, np.eye(3) / 3.0, atol=1e-12)


class TestProjectionAndChains:
    def test_barycentric_rows_are_convex_combinations(self):
        x, a, y, b = _instance(25)
        plan = sinkhorn(x, a, y, b, eps=0.1)
        proj = barycentric_project(plan, "fwd")
        assert proj.shape == (x.shape[0], y.shape[1])
        lo, hi = y.min(axis=0), y.max(axis=0)
        assert np.all(proj >= lo - 1e-9) and np.all(proj <= hi + 1e-9)

    def test_product_plan_projects_to_target_mean(self):
        x, a, y, b = _instance(27)
        plan = TransportPlan(np.outer(a, b), a, b, x, y,
                             half_sqdist_cost(x, y), 1.0)
        proj = barycentric_project(plan, "fwd")
        np.testing.assert_allclose(proj, np.tile(b @ y, (x.shape[0], 1)),
                                   atol=1e-12)

    def test_compose_kernels_are_row_stochastic(self):
        x, a, y, b = _instance(29)
        z = derive_rng(30, (0,)).standard_normal((b.size, 2))
        p1 = sinkhorn(x, a, y, b, eps=0.1)
        p2 = sinkhorn(y, b, z, b, eps=0.1)
        chain = compose_plans([p1, p2])
        for K in chain.kernels:
            np.testing.assert_allclose(K.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(chain.marginal(1), b, atol=1e-6)

    def test_compose_rejects_mismatched_marginals(self):
        x, a, y, b = _instance(31)
        p1 = sinkhorn(x, a, y, b, eps=0.1)
        b2 = np.roll(b, 1)
        p2 = sinkhorn(y, b2, x, a, eps=0.1)
        with pytest.raises(ChainConsistencyError):
            compose_plans([p1, p2])


class TestPlanSerialization:
    def test_round_trip_preserves_plan(self):
        x, a, y, b = _instance(33)
        plan = sinkhorn(x, a, y, b, eps=0.1)
        back = plan_from_dict(plan_to_dict(plan))
        np.testing.assert_allclose(back.gamma, plan.gamma, atol=1e-15)
        np.testing.assert_allclose(back.phi, plan.phi, atol=1e-15)
        assert back.eps == plan.eps and back.converged == plan.converged

    def test_file_round_trip_byte_identical(self, tmp_path):
        x, a, y, b = _instance(35)
        plans = [sinkhorn(x, a, y, b, eps=0.1)]
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        write_plans(p1, plans, meta={"tau": 0.5})
        back, meta = read_plans(p1)
        write_plans(p2, back, meta=meta)
        assert p1.read_bytes() == p2.read_bytes()

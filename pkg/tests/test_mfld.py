"""Tests for the noisy particle descent optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dptraj.core import (ParticleSystem, Phase, RunConfig, TemporalDataset,
                         TimeGrid, derive_rng)
from dptraj.data import make_multimodal
from dptraj.mfld import (DegenerateFitError, fit_factors, fit_gradient_per_datum,
                         fit_gradients, mfld_step, potential_gradient,
                         potential_gradients, poisson_subsample,
                         read_checkpoint, run, solve_plans, write_checkpoint)


def _setup(seed=0, T=4, m=12, n_per_mode=8):
    grid = TimeGrid.uniform(T)
    ds, _ = make_multimodal(n_per_mode, grid, rng=derive_rng(seed, (0,)))
    parts = 0.4 * derive_rng(seed, (1,)).standard_normal((T, m, 2))
    return grid, ds, ParticleSystem(grid, parts)


class TestFitFactors:
    def test_lam_none_gives_unit_factors(self):
        np.testing.assert_allclose(fit_factors(TimeGrid.uniform(5), None), 1.0)

    def test_lam_scales_inverse(self):
        f = fit_factors(TimeGrid.uniform(5), 0.125)
        np.testing.assert_allclose(f, 2.0)  # dt = 0.25, factor = dt / lam

    def test_last_marginal_reuses_final_gap(self):
        g = TimeGrid(np.array([0.0, 0.2, 1.0]))
        f = fit_factors(g, 0.4)
        np.testing.assert_allclose(f, [0.5, 2.0, 2.0])


class TestFitGradients:
    def test_matches_per_datum_form(self):
        grid, ds, ps = _setup(3)
        X, Y = ps.particles[1], ds.snapshots[1]
        sigma, lam, dt = 0.3, 0.5, float(grid.gaps[0])
        grads = fit_gradients(X, Y, sigma, dt / lam)
        j, y_idx = 4, 2
        single = fit_gradient_per_datum(X[j], Y[y_idx], X, sigma, lam, dt)
        np.testing.assert_allclose(grads[j, y_idx], single, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        # oracle for the per-datum fit potential with the smoothed-marginal
        # denominator held fixed (mixture weights frozen)
        grid, ds, ps = _setup(5)
        X, Y = ps.particles[0], ds.snapshots[0]
        sigma, lam, dt = 0.35, 0.4, float(grid.gaps[0])
        j, y_idx = 2, 1
        y = Y[y_idx]
        conv = np.mean(np.exp(-np.sum((X - y) ** 2, axis=1)
                              / (2 * sigma ** 2)))

        def value(x):
            return -(dt / lam) * np.exp(-np.sum((x - y) ** 2)
                                        / (2 * sigma ** 2)) / conv

        h = 1e-6
        fd = np.empty(2)
        for c in range(2):
            e = np.zeros(2)
            e[c] = h
            fd[c] = (value(X[j] + e) - value(X[j] - e)) / (2 * h)
        got = fit_gradient_per_datum(X[j], y, X, sigma, lam, dt)
        np.testing.assert_allclose(got, fd, rtol=1e-6)

    def test_underflow_raises(self):
        X = np.full((3, 2), 100.0)
        Y = np.zeros((2, 2))
        with pytest.raises(DegenerateFitError):
            fit_gradients(X, Y, 0.05, 1.0)


class TestPotentialGradients:
    def test_vectorized_matches_scalar(self):
        grid, ds, ps = _setup(7)
        cfg = RunConfig(tau=0.5, particles=ps.m, radius=2.0)
        plans = solve_plans(ps, 0.5, cfg)
        gaps = grid.gaps
        i = 1
        vec = potential_gradients(i, ps.particles[i], plans, gaps)
        for k in range(ps.m):
            single = potential_gradient(ps.particles[i][k], k,
                                        plans[i - 1], plans[i],
                                        float(gaps[i - 1]), float(gaps[i]))
            np.testing.assert_allclose(vec[k], single, atol=1e-12)

    def test_boundary_marginals_drop_missing_side(self):
        grid, ds, ps = _setup(9)
        cfg = RunConfig(tau=0.5, particles=ps.m, radius=2.0)
        plans = solve_plans(ps, 0.5, cfg)
        first = potential_gradients(0, ps.particles[0], plans, grid.gaps)
        k = 3
        only_right = potential_gradient(ps.particles[0][k], k, None, plans[0],
                                        None, float(grid.gaps[0]))
        np.testing.assert_allclose(first[k], only_right, atol=1e-12)

    def test_envelope_matches_finite_differences(self):
        # d/dx of the dt-normalized entropic value with the plan frozen:
        # moving x_k changes only row k of the cost
        grid, ds, ps = _setup(11)
        cfg = RunConfig(tau=0.8, particles=ps.m, radius=2.0)
        plans = solve_plans(ps, 0.8, cfg)
        i, k = 1, 5
        dt_l, dt_r = float(grid.gaps[0]), float(grid.gaps[1])
        X = ps.particles[i]
        a_k = 1.0 / ps.m

        def value(xk):
            tot = 0.0
            left, right = plans[i - 1], plans[i]
            d_l = xk[None, :] - left.source
            tot += float(left.gamma[:, k] @ (0.5 * np.sum(d_l * d_l, axis=1))) / dt_l
            d_r = xk[None, :] - right.target
            tot += float(right.gamma[k, :] @ (0.5 * np.sum(d_r * d_r, axis=1))) / dt_r
            return tot / a_k

        h = 1e-6
        fd = np.empty(2)
        for c in range(2):
            e = np.zeros(2)
            e[c] = h
            fd[c] = (value(X[k] + e) - value(X[k] - e)) / (2 * h)
        got = potential_gradients(i, X, plans, grid.gaps)[k]
        np.testing.assert_allclose(got, fd, rtol=2e-4)


class TestSubsample:
    def test_rate_one_keeps_everything(self):
        idx = poisson_subsample(10, 1.0, derive_rng(0, (0,)))
        np.testing.assert_array_equal(idx, np.arange(10))

    @given(seed=st.integers(0, 100), rho=st.floats(0.05, 0.95))
    @settings(max_examples=25, deadline=None)
    def test_inclusion_rate(self, seed, rho):
        n = 4000
        idx = poisson_subsample(n, rho, derive_rng(seed, (2,)))
        assert abs(idx.size / n - rho) < 0.05


class TestMfldStep:
    def test_clipped_fit_norms_bounded(self):
        grid, ds, ps = _setup(13)
        cfg = RunConfig(eta=1e-3, tau=0.5, subsample_rate=1.0, clip=0.2,
                        sigma=0.3, radius=2.0, particles=ps.m, seed=0)
        plans = solve_plans(ps, 0.5, cfg)
        _, report = mfld_step(ps, ds, plans, 1e-3, 0.5, cfg, 0, 0, 0)
        assert max(report.max_datum_norm) <= 0.2 + 1e-12

    @given(clip=st.floats(0.01, 5.0), seed=st.integers(0, 30))
    @settings(max_examples=15, deadline=None)
    def test_clip_bound_property(self, clip, seed):
        grid, ds, ps = _setup(seed, T=3, m=6, n_per_mode=4)
        cfg = RunConfig(eta=1e-3, tau=0.5, subsample_rate=1.0, clip=clip,
                        sigma=0.3, radius=2.0, particles=ps.m, seed=seed)
        plans = solve_plans(ps, 0.5, cfg)
        _, report = mfld_step(ps, ds, plans, 1e-3, 0.5, cfg, 0, 0, seed)
        assert max(report.max_datum_norm) <= clip + 1e-12

    def test_potential_part_independent_of_subsampling(self):
        # the transport component must not see the subsample draw
        grid, ds, ps = _setup(15)
        plans = solve_plans(ps, 0.5, RunConfig(tau=0.5, particles=ps.m,
                                               radius=2.0))
        parts = []
        for seed in (0, 1):
            cfg = RunConfig(eta=1e-3, tau=0.5, subsample_rate=0.5, clip=1.0,
                            sigma=0.3, radius=2.0, particles=ps.m, seed=seed)
            _, report = mfld_step(ps, ds, plans, 1e-3, 0.5, cfg, 0, 0, seed)
            parts.append(report.potential)
        for p0, p1 in zip(*parts):
            np.testing.assert_array_equal(p0, p1)

    def test_clip_none_injects_no_noise(self):
        grid, ds, ps = _setup(17)
        cfg = RunConfig(eta=1e-3, tau=0.5, subsample_rate=1.0, clip=None,
                        sigma=0.3, radius=2.0, particles=ps.m, seed=0)
        plans = solve_plans(ps, 0.5, cfg)
        _, report = mfld_step(ps, ds, plans, 1e-3, 0.5, cfg, 0, 0, 0)
        for xi in report.noise:
            np.testing.assert_array_equal(xi, 0.0)

    def test_noise_scale_is_clip_times_tau(self):
        grid, ds, ps = _setup(19, m=40)
        clip, tau = 2.0, 0.7
        draws = []
        for it in range(30):
            cfg = RunConfig(eta=1e-3, tau=tau, subsample_rate=1.0, clip=clip,
                            sigma=0.3, radius=2.0, particles=ps.m, seed=0)
            plans = solve_plans(ps, tau, cfg)
            _, report = mfld_step(ps, ds, plans, 1e-3, tau, cfg, 0, it, 0)
            draws.append(np.concatenate([x.reshape(-1) for x in report.noise]))
        std = float(np.concatenate(draws).std())
        assert std == pytest.approx(clip * tau, rel=0.05)

    def test_expected_divisor(self):
        grid, ds, ps = _setup(21)
        cfg = RunConfig(eta=1e-3, tau=0.5, subsample_rate=0.25, clip=1.0,
                        sigma=0.3, radius=2.0, particles=ps.m, seed=0)
        plans = solve_plans(ps, 0.5, cfg)
        _, report = mfld_step(ps, ds, plans, 1e-3, 0.5, cfg, 0, 0, 0)
        n = ds.snapshots[0].shape[0]
        assert report.divisors[0] == max(1.0, 0.25 * n)

    def test_step_is_deterministic_in_seed(self):
        grid, ds, ps = _setup(23)
        cfg = RunConfig(eta=1e-3, tau=0.5, subsample_rate=0.5, clip=1.0,
                        sigma=0.3, radius=2.0, particles=ps.m, seed=9)
        plans = solve_plans(ps, 0.5, cfg)
        s1, _ = mfld_step(ps, ds, plans, 1e-3, 0.5, cfg, 0, 0, 9)
        s2, _ = mfld_step(ps, ds, plans, 1e-3, 0.5, cfg, 0, 0, 9)
        np.testing.assert_array_equal(s1.particles, s2.particles)


class TestRun:
    def test_one_ledger_entry_per_private_phase(self):
        grid, ds, ps = _setup(25)
        cfg = RunConfig(eta=1e-3, tau=0.5, subsample_rate=0.5, clip=1.0,
                        sigma=0.3, radius=2.0, particles=ps.m, seed=0)
        phases = [Phase(2, 1e-3, 0.5), Phase(3, 1e-3, 0.4)]
        with pytest.warns(UserWarning, match="asymptotic"):
            res = run(ds, phases, cfg, ps)
        assert [e.label for e in res.ledger_entries] == ["mfld_phase_0",
                                                         "mfld_phase_1"]
        assert all(e.kind == "gdp" and e.mu > 0 for e in res.ledger_entries)

    def test_non_private_run_has_empty_ledger(self):
        grid, ds, ps = _setup(27)
        cfg = RunConfig(eta=1e-3, tau=0.5, clip=None, sigma=0.3, radius=2.0,
                        particles=ps.m, seed=0)
        res = run(ds, [Phase(2, 1e-3, 0.5)], cfg, ps)
        assert res.ledger_entries == []

    def test_final_plans_match_final_tau(self):
        grid, ds, ps = _setup(29)
        cfg = RunConfig(eta=1e-3, tau=0.5, clip=None, sigma=0.3, radius=2.0,
                        particles=ps.m, seed=0)
        res = run(ds, [Phase(1, 1e-3, 0.8), Phase(1, 1e-3, 0.3)], cfg, ps)
        assert res.final_tau == 0.3
        for i, plan in enumerate(res.plans):
            assert plan.eps == pytest.approx(0.3 * float(grid.gaps[i]))

    def test_monitor_sees_every_iteration(self):
        grid, ds, ps = _setup(31)
        cfg = RunConfig(eta=1e-3, tau=0.5, clip=None, sigma=0.3, radius=2.0,
                        particles=ps.m, seed=0)
        seen = []
        run(ds, [Phase(3, 1e-3, 0.5)], cfg, ps,
            monitor=lambda p, k, st, pl: seen.append((p, k)))
        assert seen == [(0, 0), (0, 1), (0, 2)]

    def test_checkpoint_round_trip(self, tmp_path):
        grid, ds, ps = _setup(33)
        p = tmp_path / "ck.jsonl"
        write_checkpoint(p, ps, {"phase": 0})
        back, meta = read_checkpoint(p)
        np.testing.assert_array_equal(back.particles, ps.particles)
        assert meta["phase"] == 0

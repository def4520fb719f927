"""Tests for trajectory sampling: index chains, anchors, and bridges."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dptraj.core import ParticleSystem, TimeGrid, derive_rng
from dptraj.eot import MarkovChainCoupling
from dptraj.sampler import (RangeError, Trajectory, bridge_point, exact_chain,
                            sample_exact_chain, sample_index_paths,
                            sample_paths, sample_trajectories, write_sampled)


def _particles(seed=0, T=4, m=6, d=2):
    grid = TimeGrid.uniform(T)
    parts = derive_rng(seed, (0,)).standard_normal((T, m, d))
    return ParticleSystem(grid, parts)


class TestIndexChains:
    def test_deterministic_kernel_follows_path(self):
        K = np.array([[0.0, 1.0], [1.0, 0.0]])
        chain = MarkovChainCoupling(np.array([1.0, 0.0]), [K, K])
        idx = sample_index_paths(chain, 5, derive_rng(0, (1,)))
        np.testing.assert_array_equal(idx, np.tile([0, 1, 0], (5, 1)))

    def test_marginal_frequencies_match_chain(self):
        K = np.array([[0.2, 0.8], [0.6, 0.4]])
        chain = MarkovChainCoupling(np.array([0.5, 0.5]), [K])
        idx = sample_index_paths(chain, 20000, derive_rng(1, (2,)))
        freq = np.mean(idx[:, 1] == 0)
        assert freq == pytest.approx(float(chain.marginal(1)[0]), abs=0.02)


class TestExactChain:
    def test_kernels_are_permutations(self):
        ps = _particles(3)
        chain = exact_chain(ps)
        for K in chain.kernels:
            assert np.all(np.sort(np.count_nonzero(K, axis=1)) == 1)
            np.testing.assert_allclose(K.sum(axis=1), 1.0, atol=1e-12)

    def test_paths_visit_existing_particles(self):
        ps = _particles(5)
        trajs = sample_exact_chain(ps, 20, derive_rng(2, (3,)))
        for i in range(ps.grid.T):
            for v in trajs.values[:, i]:
                dists = np.linalg.norm(ps.particles[i] - v, axis=1)
                assert float(dists.min()) < 1e-12

    def test_identical_marginals_give_constant_paths(self):
        grid = TimeGrid.uniform(3)
        x = derive_rng(4, (4,)).standard_normal((5, 2))
        ps = ParticleSystem(grid, np.stack([x, x, x]))
        trajs = sample_exact_chain(ps, 10, derive_rng(5, (5,)))
        np.testing.assert_allclose(trajs.values[:, 0], trajs.values[:, 1],
                                   atol=1e-12)


class TestBridge:
    def _traj(self, tau, seed=0):
        times = np.array([0.0, 1.0])
        anchors = np.array([[0.0], [2.0]])
        return Trajectory(times, anchors, tau, derive_rng(seed, (6,)))

    def test_anchor_queries_return_anchors(self):
        tr = self._traj(1.0)
        np.testing.assert_allclose(tr.at(0.0), [0.0])
        np.testing.assert_allclose(tr.at(1.0), [2.0])

    def test_tau_zero_is_linear_interpolation(self):
        tr = self._traj(0.0)
        for s in (0.25, 0.5, 0.9):
            np.testing.assert_allclose(tr.at(s), [2.0 * s], atol=1e-15)

    def test_midpoint_variance(self):
        # unit gap, tau=1: Var X_{1/2} = tau * 0.5 * 0.5 = 0.25
        draws = [float(self._traj(1.0, seed)(0.5) if False else
                       self._traj(1.0, seed).at(0.5)[0] - 1.0)
                 for seed in range(20000)]
        assert np.var(draws) == pytest.approx(0.25, rel=0.03)

    def test_repeated_query_is_cached(self):
        tr = self._traj(1.0)
        a = tr.at(0.37)
        b = tr.at(0.37)
        np.testing.assert_array_equal(a, b)

    def test_sequential_conditioning_is_consistent(self):
        # drawing 0.5 then 0.25 must bracket 0.25 between anchor and 0.5 draw
        tr = self._traj(0.0)
        mid = tr.at(0.5)
        quarter = tr.at(0.25)
        np.testing.assert_allclose(quarter, 0.5 * (tr.anchors[0] + mid),
                                   atol=1e-15)

    def test_out_of_range_rejected(self):
        tr = self._traj(1.0)
        with pytest.raises(RangeError):
            tr.at(1.5)

    @given(s=st.floats(0.01, 0.99), seed=st.integers(0, 50))
    @settings(max_examples=25, deadline=None)
    def test_bridge_point_within_line_plus_noise(self, s, seed):
        tr = self._traj(0.5, seed)
        x = bridge_point(tr, s)
        # 6-sigma envelope around the linear interpolant
        bound = 6.0 * np.sqrt(0.5 * s * (1 - s))
        assert abs(float(x[0]) - 2.0 * s) <= bound


class TestSampleTrajectories:
    def test_deterministic_in_root_seed(self):
        ps = _particles(7)
        chain = exact_chain(ps)
        t1 = sample_trajectories(chain, ps, 5, 0.5, root_seed=11)
        t2 = sample_trajectories(chain, ps, 5, 0.5, root_seed=11)
        for a, b in zip(t1, t2):
            np.testing.assert_array_equal(a.anchors, b.anchors)
            np.testing.assert_array_equal(a.at(0.4), b.at(0.4))

    def test_paths_own_independent_bridge_streams(self):
        ps = _particles(9)
        chain = exact_chain(ps)
        trajs = sample_trajectories(chain, ps, 2, 0.5, root_seed=3)
        # same gap, same query: different draws across paths
        a = trajs[0].at(0.4) - trajs[0].anchors[1]
        b = trajs[1].at(0.4) - trajs[1].anchors[1]
        assert not np.allclose(a, b)

    def test_write_sampled_format(self, tmp_path):
        import json

        ps = _particles(11)
        chain = exact_chain(ps)
        trajs = sample_trajectories(chain, ps, 3, 0.0, root_seed=5)
        p = tmp_path / "sampled.jsonl"
        write_sampled(p, trajs, ps.grid.times)
        lines = p.read_text().strip().split("\n")
        assert len(lines) == 3
        rec = json.loads(lines[0])
        assert rec["traj_id"] == 0
        assert len(rec["points"]) == ps.grid.T
        assert len(rec["points"][0]) == 1 + ps.dim

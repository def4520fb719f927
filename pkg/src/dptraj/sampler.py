"""Synthetic trajectory sampling: Markov chains of plans plus Brownian bridges."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (PURPOSE_BRIDGE, PURPOSE_PATH, ParticleSystem, TrajDPError,
                   TrajectorySet, derive_rng)
from .eot import MarkovChainCoupling, compose_plans, exact_ot


class DegenerateChainError(TrajDPError):
    pass


class RangeError(TrajDPError):
    pass


def sample_index_paths(chain: MarkovChainCoupling, n_paths: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw particle-index chains j_1 ~ initial, j_{i+1} ~ K_i[j_i, :]."""
    T = chain.T
    idx = np.empty((n_paths, T), dtype=int)
    w0 = chain.initial / chain.initial.sum()
    idx[:, 0] = rng.choice(w0.size, size=n_paths, p=w0)
    for i, K in enumerate(chain.kernels):
        if np.any(K.sum(axis=1) <= 0):
            raise DegenerateChainError(f"zero-mass kernel row at interval {i}")
        for j in range(n_paths):
            idx[j, i + 1] = rng.choice(K.shape[1], p=K[idx[j, i]])
    return idx


def sample_paths(chain: MarkovChainCoupling, particles: ParticleSystem,
                 n_paths: int, rng: np.random.Generator) -> TrajectorySet:
    """Anchor-point trajectories through the fitted particles."""
    idx = sample_index_paths(chain, n_paths, rng)
    vals = np.empty((n_paths, particles.grid.T, particles.dim))
    for i in range(particles.grid.T):
        vals[:, i] = particles.particles[i][idx[:, i]]
    return TrajectorySet(particles.grid, vals)


def exact_chain(particles: ParticleSystem) -> MarkovChainCoupling:
    """Markov chain built from exact OT plans between consecutive marginals."""
    m = particles.m
    a = np.full(m, 1.0 / m)
    plans = []
    for i in range(particles.grid.T - 1):
        plans.append(exact_ot(particles.particles[i], a,
                              particles.particles[i + 1], a))
    return compose_plans(plans)


def sample_exact_chain(particles: ParticleSystem, n_paths: int,
                       rng: np.random.Generator) -> TrajectorySet:
    """sample_paths over the exact-plan chain (permutation chain for uniform
    weights), which avoids cross-cluster hops in multimodal fits."""
    return sample_paths(exact_chain(particles), particles, n_paths, rng)


@dataclass
class Trajectory:
    """One continuous-time path: grid anchors plus lazily drawn bridge points.

    Off-grid queries inside a gap are drawn by sequential Gaussian
    conditioning on all previously drawn points of that gap and cached, so
    repeated queries are consistent with a single conditioned Wiener path.
    """

    times: np.ndarray                 # anchor times, ascending
    anchors: np.ndarray               # (T, d)
    tau: float
    rng: np.random.Generator
    _known: list = field(default_factory=list)  # per gap: sorted [(t, point)]

    def __post_init__(self):
        if not self._known:
            self._known = [[] for _ in range(len(self.times) - 1)]

    def at(self, s: float) -> np.ndarray:
        t = self.times
        if s < t[0] or s > t[-1]:
            raise RangeError(f"query time {s} outside [{t[0]}, {t[-1]}]")
        hit = np.flatnonzero(np.isclose(t, s, rtol=0.0, atol=1e-12))
        if hit.size:
            return self.anchors[hit[0]].copy()
        gap = int(np.searchsorted(t, s) - 1)
        known = self._known[gap]
        for ts, x in known:
            if ts == s:
                return x.copy()
        # bracketing points among gap endpoints and previous draws
        lo_t, lo_x = t[gap], self.anchors[gap]
        hi_t, hi_x = t[gap + 1], self.anchors[gap + 1]
        for ts, x in known:
            if lo_t < ts < s:
                lo_t, lo_x = ts, x
            elif s < ts < hi_t:
                hi_t, hi_x = ts, x
                break
        frac = (s - lo_t) / (hi_t - lo_t)
        mean = lo_x + frac * (hi_x - lo_x)
        var = self.tau * (s - lo_t) * (hi_t - s) / (hi_t - lo_t)
        if var > 0:
            x = mean + np.sqrt(var) * self.rng.standard_normal(mean.shape)
        else:
            x = mean
        known.append((s, x))
        known.sort(key=lambda p: p[0])
        return x.copy()


def bridge_point(traj: Trajectory, s: float) -> np.ndarray:
    """Sample (or recall) the trajectory's position at time s."""
    return traj.at(s)


def sample_trajectories(chain: MarkovChainCoupling, particles: ParticleSystem,
                        n_paths: int, tau: float,
                        root_seed: int) -> list[Trajectory]:
    """Continuous-time trajectories; each path owns its derived stream."""
    rng = derive_rng(root_seed, (0, 0, 0, 0, PURPOSE_PATH))
    anchors = sample_paths(chain, particles, n_paths, rng)
    out = []
    for j in range(n_paths):
        out.append(Trajectory(particles.grid.times.copy(),
                              anchors.values[j].copy(), tau,
                              derive_rng(root_seed, (0, 0, 0, j, PURPOSE_BRIDGE))))
    return out


def write_sampled(path, trajs: list[Trajectory], times) -> None:
    """Trajectory JSONL: {"traj_id": j, "points": [[t, x...], ...]}."""
    times = np.asarray(times, dtype=float)
    with open(path, "w", encoding="utf-8") as f:
        for j, tr in enumerate(trajs):
            pts = [[float(s)] + list(tr.at(float(s))) for s in times]
            f.write(json.dumps({"traj_id": j, "points": pts}) + "\n")

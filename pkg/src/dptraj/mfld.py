"""Noisy particle mean-field Langevin descent over coupled time marginals.

Each outer iteration re-solves the T-1 entropic transport problems between
consecutive particle marginals, then takes one subsampled, clipped, noised
gradient step on every particle (Jacobi update across marginals).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (PURPOSE_NOISE, PURPOSE_SUBSAMPLE, ParameterError,
                   ParticleSystem, Phase, RunConfig, TemporalDataset,
                   TrajDPError, derive_rng)
from .eot import TransportPlan, barycentric_project, exact_ot, sinkhorn
from .privacy import LedgerEntry, gdp_of_dpsgd

CONV_UNDERFLOW = 1e-300
EPS_FLOOR_FACTOR = 1e-6


class DegenerateFitError(TrajDPError):
    pass


class DivergenceError(TrajDPError):
    pass


def fit_factors(grid, lam: float | None) -> np.ndarray:
    """Per-marginal fit weights dt_i / lambda.

    lam=None means lambda = dt_i, i.e. all factors 1. The last marginal reuses
    the final gap since it has no outgoing interval.
    """
    T = grid.T
    if lam is None:
        return np.ones(T)
    gaps = grid.gaps
    dt = np.concatenate([gaps, gaps[-1:]])
    return dt / lam


def _gaussian(sqdist: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-sqdist / (2.0 * sigma * sigma))


def fit_gradients(particles: np.ndarray, data: np.ndarray, sigma: float,
                  factor: float) -> np.ndarray:
    """Per-(particle, datum) fit gradients, shape (m, n, d).

    Entry [j, y] is factor * g_sigma(x_j - y) (x_j - y) / sigma^2 divided by
    the smoothed marginal (g_sigma * mu)(y) = (1/m) sum_l g_sigma(x_l - y).
    """
    diff = particles[:, None, :] - data[None, :, :]  # (m, n, d)
    sq = np.sum(diff * diff, axis=2)
    g = _gaussian(sq, sigma)
    conv = g.mean(axis=0)  # (n,)
    if np.any(conv < CONV_UNDERFLOW):
        raise DegenerateFitError(
            "smoothed marginal underflow: particle cloud too far from data")
    return (factor / (sigma * sigma)) * g[:, :, None] * diff / conv[None, :, None]


def fit_gradient_per_datum(x: np.ndarray, y: np.ndarray,
                           marginal_particles: np.ndarray, sigma: float,
                           lam: float, dt: float) -> np.ndarray:
    """Spatial gradient at x of the per-datum fit potential for datum y."""
    if sigma <= 0 or lam <= 0:
        raise ParameterError("sigma and lam must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff_all = marginal_particles - y[None, :]
    conv = float(_gaussian(np.sum(diff_all * diff_all, axis=1), sigma).mean())
    if conv < CONV_UNDERFLOW:
        raise DegenerateFitError("smoothed marginal underflow at datum")
    diff = x - y
    g = float(_gaussian(np.sum(diff * diff), sigma))
    return (dt / lam) * g * diff / (sigma * sigma) / conv


def potential_gradient(x: np.ndarray, k: int,
                       left_plan: TransportPlan | None,
                       right_plan: TransportPlan | None,
                       dt_left: float | None, dt_right: float | None) -> np.ndarray:
    """Schroedinger-potential gradient for particle k of one marginal.

    (x - fwd_bar(right_plan)[k]) / dt_right + (x - bwd_bar(left_plan)[k]) / dt_left,
    with either term dropped at the boundary marginals.
    """
    out = np.zeros_like(np.asarray(x, dtype=float))
    if right_plan is not None:
        out = out + (x - barycentric_project(right_plan, "fwd")[k]) / dt_right
    if left_plan is not None:
        out = out + (x - barycentric_project(left_plan, "bwd")[k]) / dt_left
    return out


def potential_gradients(i: int, particles_i: np.ndarray,
                        plans: list[TransportPlan], gaps: np.ndarray) -> np.ndarray:
    """Vectorized potential gradients for every particle of marginal i."""
    T = len(plans) + 1
    out = np.zeros_like(particles_i)
    if i < T - 1:
        out += (particles_i - barycentric_project(plans[i], "fwd")) / gaps[i]
    if i > 0:
        out += (particles_i - barycentric_project(plans[i - 1], "bwd")) / gaps[i - 1]
    return out


def poisson_subsample(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Each index included independently with probability rho; may be empty."""
    if not (0.0 < rho <= 1.0):
        raise ParameterError("rho must be in (0, 1]")
    if rho == 1.0:
        return np.arange(n)
    return np.flatnonzero(rng.random(n) < rho)


def solve_plans(state: ParticleSystem, tau: float, config: RunConfig,
                warm: list | None = None) -> list[TransportPlan]:
    """Entropic plans between consecutive marginals with eps_i = tau * dt_i.

    Falls back to the exact LP plan when eps drops below the numeric floor
    relative to the cost scale.
    """
    T = state.grid.T
    m = state.m
    a = np.full(m, 1.0 / m)
    gaps = state.grid.gaps
    plans = []
    for i in range(T - 1):
        x, y = state.particles[i], state.particles[i + 1]
        from .eot import half_sqdist_cost
        cost = half_sqdist_cost(x, y)
        eps = tau * gaps[i]
        floor = EPS_FLOOR_FACTOR * max(float(np.median(cost)), 1e-12)
        if eps <= floor:
            plans.append(exact_ot(x, a, y, a, cost=cost))
        else:
            w = None
            if warm is not None and warm[i] is not None:
                w = warm[i]
            plans.append(sinkhorn(x, a, y, a, eps, tol=config.sinkhorn_tol,
                                  max_iter=config.sinkhorn_max_iter,
                                  cost=cost, warm=w))
    return plans


@dataclass
class GradientReport:
    """Diagnostics for one optimizer step."""

    fit: list[np.ndarray]          # clipped, averaged fit component per marginal
    potential: list[np.ndarray]    # noise- and clip-free potential component
    noise: list[np.ndarray]        # injected Gaussian draws (pre-division)
    subsample_sizes: list[int]
    divisors: list[float]
    max_datum_norm: list[float]    # largest per-datum norm after clipping


def mfld_step(state: ParticleSystem, dataset: TemporalDataset,
              plans: list[TransportPlan], eta: float, tau: float,
              config: RunConfig, phase_idx: int, it_idx: int,
              root_seed: int) -> tuple[ParticleSystem, GradientReport]:
    """One Jacobi update of all particles.

    x <- x - eta * [ (sum of clipped per-datum fit gradients + noise) / D
                     + potential gradient ]
    with per-coordinate noise std clip * tau and divisor D = max(1, rho N_i)
    (or the realized subsample size when configured). clip=None runs the
    non-private variant: no clipping, no injected noise.
    """
    grid = state.grid
    T = grid.T
    gaps = grid.gaps
    factors = fit_factors(grid, config.lam)
    rho = config.subsample_rate
    clip = config.clip

    fit_parts, pot_parts, noise_parts = [], [], []
    sizes, divisors, max_norms = [], [], []
    new = np.empty_like(state.particles)

    for i in range(T):
        X = state.particles[i]
        data = dataset.snapshots[i]
        n_i = data.shape[0]

        rng_sub = derive_rng(root_seed, (phase_idx, it_idx, i, 0,
                                         PURPOSE_SUBSAMPLE))
        idx = poisson_subsample(n_i, rho, rng_sub)
        sub = data[idx]

        if sub.shape[0] > 0:
            grads = fit_gradients(X, sub, config.sigma, factors[i])
            if clip is not None:
                norms = np.linalg.norm(grads, axis=2)
                scale = np.minimum(1.0, clip / np.maximum(norms, 1e-300))
                grads = grads * scale[:, :, None]
                max_norms.append(float((norms * scale).max()))
            else:
                max_norms.append(float(np.linalg.norm(grads, axis=2).max()))
            fit_sum = grads.sum(axis=1)  # (m, d)
        else:
            fit_sum = np.zeros_like(X)
            max_norms.append(0.0)

        if config.divisor == "expected":
            D = max(1.0, rho * n_i)
        else:
            D = max(1.0, float(sub.shape[0]))

        if clip is not None and tau > 0:
            rng_noise = derive_rng(root_seed, (phase_idx, it_idx, i, 0,
                                               PURPOSE_NOISE))
            xi = clip * tau * rng_noise.standard_normal(X.shape)
        else:
            xi = np.zeros_like(X)

        pot = potential_gradients(i, X, plans, gaps)

        new[i] = X - eta * ((fit_sum + xi) / D + pot)
        if not np.all(np.isfinite(new[i])):
            k = int(np.argwhere(~np.isfinite(new[i]))[0][0])
            raise DivergenceError(
                f"non-finite update at marginal {i}, particle {k}, "
                f"iteration {it_idx}")

        fit_parts.append(fit_sum / D)
        pot_parts.append(pot)
        noise_parts.append(xi)
        sizes.append(int(sub.shape[0]))
        divisors.append(D)

    report = GradientReport(fit_parts, pot_parts, noise_parts, sizes,
                            divisors, max_norms)
    return state.replace(new), report


@dataclass
class RunResult:
    state: ParticleSystem
    plans: list[TransportPlan]
    ledger_entries: list[LedgerEntry]
    final_tau: float


def run(dataset: TemporalDataset, phases: tuple[Phase, ...] | list[Phase],
        config: RunConfig, init: ParticleSystem,
        monitor=None, checkpoint_every: int | None = None,
        checkpoint_path=None) -> RunResult:
    """Execute annealing phases of the optimizer.

    monitor, when given, is called as monitor(phase_idx, it_idx, state, plans)
    after each plan solve and before the step. One accountant entry is
    recorded per phase (skipped in non-private mode or for empty phases).
    """
    if init.grid.T != dataset.grid.T or init.dim != dataset.dim:
        raise ParameterError("initialization does not match dataset shape")
    state = init
    entries: list[LedgerEntry] = []
    plans: list[TransportPlan] = []
    final_tau = phases[-1].tau if phases else config.tau
    total_it = 0

    for p_idx, phase in enumerate(phases):
        warm = [None] * (dataset.grid.T - 1)
        for k in range(phase.iterations):
            plans = solve_plans(state, phase.tau, config, warm=warm)
            warm = [(pl.phi, pl.psi) if pl.phi is not None else None
                    for pl in plans]
            if monitor is not None:
                monitor(p_idx, k, state, plans)
            state, _ = mfld_step(state, dataset, plans, phase.eta, phase.tau,
                                 config, p_idx, k, config.seed)
            total_it += 1
            if (checkpoint_every and checkpoint_path
                    and total_it % checkpoint_every == 0):
                write_checkpoint(checkpoint_path, state,
                                 {"phase": p_idx, "iteration": k + 1})
        if phase.iterations > 0 and config.clip is not None:
            entries.append(LedgerEntry(
                label=f"mfld_phase_{p_idx}", kind="gdp",
                mu=gdp_of_dpsgd(config.subsample_rate, phase.iterations,
                                phase.tau),
                meta={"rho": config.subsample_rate, "K": phase.iterations,
                      "tau": phase.tau}))

    # final plans at the returned particles (post-processing)
    plans = solve_plans(state, final_tau, config)
    return RunResult(state, plans, entries, final_tau)


# ---------------------------------------------------------------------------
# Checkpoints


def write_checkpoint(path, state: ParticleSystem, meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"kind": "meta", "times": list(state.grid.times),
                            **meta}, sort_keys=True) + "\n")
        for i in range(state.grid.T):
            for x in state.particles[i]:
                f.write(json.dumps({"t": i, "x": list(x)}) + "\n")


def read_checkpoint(path):
    from .core import TimeGrid

    meta = None
    buckets: dict[int, list] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            if rec.get("kind") == "meta":
                meta = rec
            else:
                buckets.setdefault(int(rec["t"]), []).append(rec["x"])
    if meta is None:
        raise ParameterError("checkpoint missing meta record")
    grid = TimeGrid(np.asarray(meta["times"], dtype=float))
    parts = np.stack([np.asarray(buckets[i], dtype=float)
                      for i in range(grid.T)])
    return ParticleSystem(grid, parts), meta

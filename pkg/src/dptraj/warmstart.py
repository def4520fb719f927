"""Private warm-start initializers: noisy per-marginal means and DP clustering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (ParameterError, ParticleSystem, TemporalDataset,
                   TrajDPError, validate_dataset)
from .privacy import LedgerEntry, gaussian_mechanism_sigma


class DegenerateClusterError(TrajDPError):
    pass


@dataclass
class WarmStart:
    """Per-marginal weighted centers plus the ledger entries that paid for them."""

    times: np.ndarray
    centers: list[np.ndarray]          # (k_i, d) per marginal
    weights: list[np.ndarray]          # simplex weights per marginal
    ledger_entries: list[LedgerEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "centers": [c.tolist() for c in self.centers],
            "weights": [w.tolist() for w in self.weights],
            "ledger_entries": [e.to_dict() for e in self.ledger_entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WarmStart":
        return cls(np.asarray(d["times"], dtype=float),
                   [np.asarray(c, dtype=float) for c in d["centers"]],
                   [np.asarray(w, dtype=float) for w in d["weights"]],
                   [LedgerEntry.from_dict(e) for e in d["ledger_entries"]])


def write_warmstart(path, ws: WarmStart) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(ws.to_dict(), f, sort_keys=True)


def read_warmstart(path) -> WarmStart:
    with open(path, "r", encoding="utf-8") as f:
        return WarmStart.from_dict(json.load(f))


def mean_noise_std(R: float, eps: float, delta: float, n: int) -> float:
    """Per-coordinate std of the private mean: sqrt(8 R^2 ln(1/delta)) / (eps n)."""
    return math.sqrt(8.0 * R * R * math.log(1.0 / delta)) / (eps * n)


def private_mean_init(dataset: TemporalDataset, R: float, eps: float,
                      delta: float, rng: np.random.Generator) -> WarmStart:
    """Noisy mean of each marginal; one parallel-composed ledger entry.

    The marginals hold disjoint people, so the T mean releases cost a single
    (eps, delta) by parallel composition.
    """
    if not (0.0 < eps < 1.0 or eps >= 1.0) or not (0.0 < delta < 1.0):
        raise ParameterError("need eps > 0 and delta in (0, 1)")
    validate_dataset(dataset, R)
    centers, weights = [], []
    for snap in dataset.snapshots:
        n = snap.shape[0]
        std = mean_noise_std(R, eps, delta, n)
        noisy = snap.mean(axis=0) + std * rng.standard_normal(dataset.dim)
        centers.append(noisy[None, :])
        weights.append(np.ones(1))
    entry = LedgerEntry(label="private_mean_init", kind="eps_delta",
                        eps=eps, delta=delta,
                        meta={"rule": "parallel over time marginals"})
    return WarmStart(dataset.grid.times.copy(), centers, weights, [entry])


def _dp_lloyd(points: np.ndarray, k: int, R: float, eps: float, delta: float,
              iters: int, rng: np.random.Generator,
              init_centers: np.ndarray | None = None) -> np.ndarray:
    """Gaussian-mechanism Lloyd iterations under a total (eps, delta) budget.

    A tenth of the budget buys a noisy mean to seed the centers; the rest is
    split evenly (basic composition) over the 2 * iters releases of
    per-cluster coordinate sums (sensitivity 2R) and counts (sensitivity 1).
    init_centers, when given (e.g. the previous marginal's centers), replaces
    the circle seed; it must be data-independent or already privatized.
    """
    d = points.shape[1]
    n = points.shape[0]
    eps_seed, delta_seed = 0.1 * eps, 0.1 * delta
    n_rel = 2 * iters
    eps_r = 0.9 * eps / n_rel
    delta_r = 0.9 * delta / n_rel
    sigma_sum = gaussian_mechanism_sigma(2.0 * R, eps_r, delta_r)
    sigma_cnt = gaussian_mechanism_sigma(1.0, eps_r, delta_r)

    if init_centers is not None:
        centers = np.array(init_centers, dtype=float)
        # break coincident starts so clusters can separate as modes drift
        angles = 2.0 * np.pi * np.arange(k) / k
        centers[:, 0] += 0.05 * R * np.cos(angles)
        if d > 1:
            centers[:, 1] += 0.05 * R * np.sin(angles)
    else:
        sigma_seed = gaussian_mechanism_sigma(2.0 * R / n, eps_seed, delta_seed)
        seed = points.mean(axis=0) + sigma_seed * rng.standard_normal(d)
        # spread start: circle (first two axes) around the noisy mean
        centers = np.tile(seed, (k, 1))
        angles = 2.0 * np.pi * np.arange(k) / k
        centers[:, 0] += 0.4 * R * np.cos(angles)
        if d > 1:
            centers[:, 1] += 0.4 * R * np.sin(angles)

    for _ in range(iters):
        dist = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        assign = np.argmin(dist, axis=1)
        noisy_cnt = np.empty(k)
        for c in range(k):
            sel = assign == c
            s = points[sel].sum(axis=0) + sigma_sum * rng.standard_normal(d)
            cnt = float(sel.sum()) + sigma_cnt * rng.standard_normal()
            noisy_cnt[c] = cnt
            if cnt >= 1.0:
                cand = s / cnt
                # keep centers inside the domain ball
                nrm = np.linalg.norm(cand)
                if nrm > R:
                    cand = cand * (R / nrm)
                centers[c] = cand
        # relocate starved clusters by splitting the heaviest one; decided
        # from the noisy counts alone, so it is free post-processing
        floor = max(5.0 * sigma_cnt, 0.02 * n)
        heavy = int(np.argmax(noisy_cnt))
        for c in range(k):
            if c != heavy and noisy_cnt[c] < floor:
                off = rng.standard_normal(d)
                off *= 0.1 * R / max(np.linalg.norm(off), 1e-12)
                centers[c] = centers[heavy] + off
        # seed/relocation offsets can leave the ball; project back (free
        # post-processing, keeps downstream radius validation honest)
        nrm = np.linalg.norm(centers, axis=1)
        over = nrm > R
        if np.any(over):
            centers[over] *= (R / nrm[over])[:, None]
    return centers


def private_cluster_init(dataset: TemporalDataset, k: int, R: float,
                         eps: float, delta: float, lloyd_iters: int,
                         rng: np.random.Generator) -> WarmStart:
    """DP k-means centers plus noisy counts per marginal.

    Budget split: (eps/3, delta/3) for clustering at each marginal (parallel
    over time), and (eps/(3k), delta/(3k)) per cluster count, basic-composed
    over the k counts to another (eps/3, delta/3). Total 2/3 of the budget.
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    validate_dataset(dataset, R)
    eps_cluster, delta_cluster = eps / 3.0, delta / 3.0
    eps_count, delta_count = eps / (3.0 * k), delta / (3.0 * k)
    sigma_cnt = gaussian_mechanism_sigma(1.0, eps_count, delta_count)

    centers_all, weights_all = [], []
    prev = None
    for snap in dataset.snapshots:
        n = snap.shape[0]
        if k > n:
            raise DegenerateClusterError(f"k={k} exceeds snapshot size {n}")
        # seed each marginal from the previous one's (already private)
        # centers: modes drift continuously, so tracking beats a cold start
        centers = _dp_lloyd(snap, k, R, eps_cluster, delta_cluster,
                            lloyd_iters, rng, init_centers=prev)
        prev = centers
        dist = np.linalg.norm(snap[:, None, :] - centers[None, :, :], axis=2)
        assign = np.argmin(dist, axis=1)
        counts = np.bincount(assign, minlength=k).astype(float)
        noisy = counts + sigma_cnt * rng.standard_normal(k)
        noisy = np.maximum(noisy, 0.0)
        total = noisy.sum()
        w = noisy / total if total > 0 else np.full(k, 1.0 / k)
        centers_all.append(centers)
        weights_all.append(w)

    entries = [
        LedgerEntry(label="private_cluster_centers", kind="eps_delta",
                    eps=eps_cluster, delta=delta_cluster,
                    meta={"rule": "parallel over time marginals",
                          "lloyd_iters": lloyd_iters}),
        LedgerEntry(label="private_cluster_counts", kind="eps_delta",
                    eps=eps / 3.0, delta=delta / 3.0,
                    meta={"rule": f"basic over {k} counts, parallel over time",
                          "per_count_eps": eps_count}),
    ]
    return WarmStart(dataset.grid.times.copy(), centers_all, weights_all,
                     entries)


def materialize_particles(ws: WarmStart, m: int, jitter_std: float,
                          rng: np.random.Generator,
                          consistent: bool = False) -> ParticleSystem:
    """Draw m particles per marginal from the warm-start mixture.

    With consistent=True (requires the same cluster count at every marginal,
    with labels aligned across time as the tracking initializer produces),
    each particle keeps one cluster label for all times, drawn from the
    time-averaged weights; this keeps warm-started trajectories mode-coherent.
    Pure post-processing: reads only the WarmStart, never the raw data.
    """
    from .core import TimeGrid

    grid = TimeGrid(ws.times)
    d = ws.centers[0].shape[1]
    parts = np.empty((grid.T, m, d))
    ks = {c.shape[0] for c in ws.centers}
    if consistent:
        if len(ks) != 1:
            raise ParameterError(
                "consistent materialization needs equal cluster counts")
        k = ks.pop()
        # median over time: robust to the occasional marginal whose noisy
        # clustering misassigned mass between clusters
        wbar = np.median(np.stack(ws.weights), axis=0)
        wbar = wbar / wbar.sum()
        # deterministic largest-remainder allocation: multinomial sampling
        # would add O(1/sqrt(m)) spurious mass imbalance per cluster
        quota = m * wbar
        counts = np.floor(quota).astype(int)
        rem = np.argsort(quota - counts)[::-1]
        for j in rem[: m - counts.sum()]:
            counts[j] += 1
        labels = np.repeat(np.arange(k), counts)
        for i in range(grid.T):
            parts[i] = ws.centers[i][labels]
            if jitter_std > 0:
                parts[i] += jitter_std * rng.standard_normal((m, d))
        return ParticleSystem(grid, parts)
    for i in range(grid.T):
        k = ws.centers[i].shape[0]
        idx = rng.choice(k, size=m, p=ws.weights[i]) if k > 1 \
            else np.zeros(m, dtype=int)
        parts[i] = ws.centers[i][idx]
        if jitter_std > 0:
            parts[i] += jitter_std * rng.standard_normal((m, d))
    return ParticleSystem(grid, parts)


def gaussian_init(grid, m: int, d: int, mean, std: float,
                  rng: np.random.Generator) -> ParticleSystem:
    """Non-private default initialization: i.i.d. N(mean, std^2 I)."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (d,))
    parts = mean + std * rng.standard_normal((grid.T, m, d))
    return ParticleSystem(grid, parts)

"""Ground-truth SDE simulation, benchmark generators, ingestion, and binning."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (SchemaError, TemporalDataset, TimeGrid, TrajDPError,
                   TrajectorySet)


class SimulationError(TrajDPError):
    pass


class BinningError(TrajDPError):
    pass


class IngestionError(TrajDPError):
    pass


def zero_drift(x, t):
    return np.zeros_like(x)


def quadratic_well(a: float, center: Callable[[float], np.ndarray] | None = None):
    """Drift -grad Psi for Psi(x, t) = a * ||x - c(t)||^2."""

    def drift(x, t):
        c = 0.0 if center is None else center(t)
        return -2.0 * a * (x - c)

    return drift


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution: point mass, isotropic Gaussian, or mixture."""

    kind: str  # point | gaussian | mixture
    mean: np.ndarray
    std: float = 0.0
    components: tuple["InitialLaw", ...] = ()
    weights: tuple[float, ...] = ()

    @classmethod
    def point(cls, x0):
        return cls("point", np.atleast_1d(np.asarray(x0, dtype=float)))

    @classmethod
    def gaussian(cls, mean, std):
        return cls("gaussian", np.atleast_1d(np.asarray(mean, dtype=float)),
                   float(std))

    @classmethod
    def mixture(cls, components, weights):
        return cls("mixture", components[0].mean, 0.0,
                   tuple(components), tuple(weights))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "point":
            return np.tile(self.mean, (n, 1))
        if self.kind == "gaussian":
            d = self.mean.size
            return self.mean + self.std * rng.standard_normal((n, d))
        if self.kind == "mixture":
            idx = rng.choice(len(self.components), size=n, p=self.weights)
            out = np.empty((n, self.components[0].mean.size))
            for j, comp in enumerate(self.components):
                sel = idx == j
                if sel.any():
                    out[sel] = comp.sample(rng, int(sel.sum()))
            return out
        raise SchemaError(f"unknown initial law kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class SdeSpec:
    """dX = drift(X, t) dt + sqrt(tau_true) dB with X_0 ~ initial."""

    drift: Callable[[np.ndarray, float], np.ndarray]
    tau_true: float
    initial: InitialLaw
    dim: int

    def __post_init__(self):
        if self.tau_true < 0:
            raise SchemaError("tau_true must be >= 0")


def simulate_sde(spec: SdeSpec, n_paths: int, grid: TimeGrid,
                 steps_per_gap: int, rng: np.random.Generator) -> TrajectorySet:
    """Euler-Maruyama integration from t=0, recorded at the grid times."""
    if steps_per_gap < 1:
        raise SimulationError("steps_per_gap must be >= 1")
    d = spec.dim
    x = spec.initial.sample(rng, n_paths)
    if x.shape[1] != d:
        raise SimulationError("initial law dimension mismatch")
    out = np.empty((n_paths, grid.T, d))
    sq = np.sqrt(spec.tau_true)
    t_cur = 0.0
    for i, t_next in enumerate(grid.times):
        gap = t_next - t_cur
        if gap > 0:
            h = gap / steps_per_gap
            for s in range(steps_per_gap):
                t = t_cur + s * h
                mu = spec.drift(x, t)
                if not np.all(np.isfinite(mu)):
                    raise SimulationError(f"drift blew up at t={t:.6g}")
                x = x + h * mu
                if sq > 0:
                    x = x + sq * np.sqrt(h) * rng.standard_normal(x.shape)
        out[:, i] = x
        t_cur = t_next
    return TrajectorySet(grid, out)


def marginalize(trajs: TrajectorySet, grid: TimeGrid,
                one_point_per_person: bool,
                rng: np.random.Generator | None = None) -> TemporalDataset:
    """Turn trajectories into per-time snapshots.

    With one_point_per_person, each trajectory contributes a single point at a
    uniformly random grid index; otherwise every trajectory contributes at
    every grid time (group-privacy mode).
    """
    if not np.array_equal(trajs.grid.times, grid.times):
        raise BinningError("trajectory grid does not match target grid")
    T = grid.T
    if not one_point_per_person:
        snaps = [trajs.values[:, i].copy() for i in range(T)]
        return TemporalDataset(grid, tuple(snaps))
    if rng is None:
        raise BinningError("one-point-per-person marginalization needs an rng")
    idx = rng.integers(0, T, size=trajs.n_paths)
    snaps = []
    for i in range(T):
        sel = idx == i
        if not sel.any():
            raise BinningError(f"empty snapshot at grid index {i}")
        snaps.append(trajs.values[sel, i].copy())
    return TemporalDataset(grid, tuple(snaps))


@dataclass(frozen=True)
class RawTrajectoryFile:
    """Flat records (trajectory id, time in [0,1], point)."""

    ids: np.ndarray
    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        if not (len(self.ids) == len(self.times) == len(self.points)):
            raise IngestionError("raw trajectory columns have unequal lengths")


def bin_raw(raw: RawTrajectoryFile, grid: TimeGrid,
            one_point_per_person: bool = True,
            rng: np.random.Generator | None = None) -> TemporalDataset:
    """Assign records to the nearest grid time (ties to the earlier index).

    In the one-point model each trajectory keeps a single uniformly chosen
    record after binning.
    """
    t = np.asarray(raw.times, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise IngestionError("record time outside [0, 1]")
    # nearest grid index, earlier index on exact midpoint ties
    dist = np.abs(t[:, None] - grid.times[None, :])
    bins = np.argmin(dist, axis=1)  # argmin takes the first (earlier) minimum

    keep = np.ones(len(t), dtype=bool)
    if one_point_per_person:
        if rng is None:
            raise IngestionError("one-point binning needs an rng")
        keep[:] = False
        ids = np.asarray(raw.ids)
        for uid in np.unique(ids):
            rows = np.flatnonzero(ids == uid)
            keep[rows[rng.integers(0, rows.size)]] = True

    snaps = []
    for i in range(grid.T):
        sel = keep & (bins == i)
        if not sel.any():
            raise BinningError(f"empty snapshot at grid index {i}")
        snaps.append(np.asarray(raw.points)[sel])
    return TemporalDataset(grid, tuple(snaps))


def arclength_times(points: np.ndarray) -> np.ndarray:
    """Reparametrize a polyline to [0, 1] by cumulative arc length."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = seg.sum()
    if total == 0:
        return np.linspace(0.0, 1.0, len(points))
    s = np.concatenate([[0.0], np.cumsum(seg)]) / total
    return s


def _mode_curves():
    upper = lambda t: np.stack([np.cos(np.pi * t), np.sin(np.pi * t)], axis=-1)
    lower = lambda t: np.stack([np.cos(np.pi * t), -np.sin(np.pi * t)], axis=-1)
    line = lambda t: np.stack([1.0 - 2.0 * t, np.zeros_like(t)], axis=-1)
    return (upper, line, lower)


def mode_centers(t) -> np.ndarray:
    """Noise-free positions of the three benchmark modes at times t, (3, ..., 2)."""
    t = np.asarray(t, dtype=float)
    return np.stack([c(t) for c in _mode_curves()], axis=0)


def make_multimodal(n_per_mode: int, grid: TimeGrid,
                    noise_var: float = 0.005,
                    rng: np.random.Generator | None = None):
    """Three-mode benchmark: upper semicircle, straight line, lower semicircle.

    Returns (dataset with 3*n_per_mode points per timestep, ground-truth
    trajectory set).
    """
    if n_per_mode < 1:
        raise SchemaError("n_per_mode must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    t = grid.times
    std = np.sqrt(noise_var)
    values = []
    for curve in _mode_curves():
        base = curve(t)  # (T, 2)
        noise = std * rng.standard_normal((n_per_mode, grid.T, 2)) if std > 0 \
            else np.zeros((n_per_mode, grid.T, 2))
        values.append(base[None, :, :] + noise)
    values = np.concatenate(values, axis=0)  # (3n, T, 2)
    trajs = TrajectorySet(grid, values)
    snaps = tuple(values[:, i].copy() for i in range(grid.T))
    return TemporalDataset(grid, snaps), trajs


# ---------------------------------------------------------------------------
# File formats


def write_dataset(path, dataset: TemporalDataset) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, snap in enumerate(dataset.snapshots):
            for x in snap:
                f.write(json.dumps({"t": i, "x": list(x)}) + "\n")


def read_dataset(path, grid: TimeGrid) -> TemporalDataset:
    buckets: dict[int, list] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            buckets.setdefault(int(rec["t"]), []).append(rec["x"])
    snaps = []
    for i in range(grid.T):
        if i not in buckets:
            raise SchemaError(f"dataset file missing snapshot {i}")
        snaps.append(np.asarray(buckets[i], dtype=float))
    return TemporalDataset(grid, tuple(snaps))


def write_raw(path, raw: RawTrajectoryFile) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for uid, s, x in zip(raw.ids, raw.times, raw.points):
            f.write(json.dumps({"id": int(uid), "s": float(s),
                                "x": list(np.asarray(x, dtype=float))}) + "\n")


def read_raw(path) -> RawTrajectoryFile:
    ids, times, pts = [], [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ids.append(int(rec["id"]))
            times.append(float(rec["s"]))
            pts.append(rec["x"])
    return RawTrajectoryFile(np.asarray(ids), np.asarray(times),
                             np.asarray(pts, dtype=float))


def write_grid(path, grid: TimeGrid) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(list(grid.times), f)


def read_grid(path) -> TimeGrid:
    with open(path, "r", encoding="utf-8") as f:
        return TimeGrid(np.asarray(json.load(f), dtype=float))


def write_trajectories(path, trajs: TrajectorySet) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for j in range(trajs.n_paths):
            pts = [[float(t)] + list(trajs.values[j, i])
                   for i, t in enumerate(trajs.grid.times)]
            f.write(json.dumps({"traj_id": j, "points": pts}) + "\n")

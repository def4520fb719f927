"""Time-grid subsampling and Monte-Carlo checks of the max-gap bound."""

from __future__ import annotations

import json

import numpy as np

from .core import ParameterError, TemporalDataset, TimeGrid, TrajDPError


class CompositionError(TrajDPError):
    pass


def subsample_grid(T: int, z: int, keep_endpoints: bool,
                   rng: np.random.Generator) -> np.ndarray:
    """Uniformly random sorted subset of {0, ..., T-1} of size z.

    With keep_endpoints, indices 0 and T-1 are always included and the
    remaining z-2 indices are drawn from the interior; the endpoint snapshots
    must then be privatized upstream.
    """
    if not (2 <= z <= T):
        raise ParameterError(f"z={z} out of range for T={T}")
    if keep_endpoints:
        interior = rng.choice(np.arange(1, T - 1), size=z - 2, replace=False) \
            if z > 2 else np.array([], dtype=int)
        return np.sort(np.concatenate([[0], interior, [T - 1]]).astype(int))
    return np.sort(rng.choice(T, size=z, replace=False).astype(int))


def max_gap_statistics(T: int, z: int, trials: int,
                       rng: np.random.Generator) -> dict:
    """Monte-Carlo distribution of the maximum gap of a random z-subset.

    The subset is drawn from {1, ..., T-1} and padded with the boundary
    points 0 and T, matching the setting of the gap bound
    Pr[max gap >= t] <= T exp(-z t / T).
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    maxima = np.empty(trials)
    pool = np.arange(1, T)
    for r in range(trials):
        pts = np.sort(rng.choice(pool, size=z, replace=False))
        full = np.concatenate([[0], pts, [T]])
        maxima[r] = np.diff(full).max()
    return {"mean_max_gap": float(maxima.mean()), "samples": maxima}


def restrict_dataset(dataset: TemporalDataset, subset: np.ndarray,
                     privatized_endpoints=None, m: int | None = None,
                     rng: np.random.Generator | None = None,
                     require_private_endpoints: bool = False) -> TemporalDataset:
    """Restrict a dataset to a subset of grid indices (original time values).

    When privatized endpoints are supplied (a WarmStart), the first/last
    snapshots of the restriction are replaced by m samples materialized from
    its centers.
    """
    subset = np.asarray(sorted(int(i) for i in subset))
    if subset.min() < 0 or subset.max() >= dataset.grid.T:
        raise ParameterError("subset index out of range")
    has_endpoint = subset[0] == 0 or subset[-1] == dataset.grid.T - 1
    if require_private_endpoints and has_endpoint and privatized_endpoints is None:
        raise CompositionError(
            "endpoint kept in subset but no privatized endpoint source given")

    times = dataset.grid.times[subset]
    snaps = [dataset.snapshots[i].copy() for i in subset]

    if privatized_endpoints is not None:
        from .warmstart import materialize_particles

        if m is None or rng is None:
            raise ParameterError("endpoint privatization needs m and rng")
        ps = materialize_particles(privatized_endpoints, m, 0.0, rng)
        for pos, i in enumerate(subset):
            if i == 0 or i == dataset.grid.T - 1:
                snaps[pos] = ps.particles[i].copy()

    return TemporalDataset(TimeGrid(times), tuple(snaps))


def write_subset(path, subset) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([int(i) for i in subset], f)


def read_subset(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        return np.asarray(json.load(f), dtype=int)

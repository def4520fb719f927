"""Shared domain types: time grids, datasets, particle systems, configs, seeding."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np


class TrajDPError(Exception):
    """Base class for all library errors."""


class SchemaError(TrajDPError):
    """Structurally invalid dataset / grid / particle input."""


class DomainViolationError(TrajDPError):
    """A data point lies outside the declared domain ball."""


class ConfigError(TrajDPError):
    """Invalid or unknown configuration content."""


class ParameterError(TrajDPError):
    """An operation was called with out-of-range parameters."""


# Integer components identifying (phase, iteration, marginal, particle, purpose).
SeedPath = tuple[int, ...]

# Purpose tags used when deriving streams inside the optimizer / samplers.
PURPOSE_SUBSAMPLE = 1
PURPOSE_NOISE = 2
PURPOSE_INIT = 3
PURPOSE_PATH = 4
PURPOSE_BRIDGE = 5


def derive_rng(root_seed: int, path: Sequence[int]) -> np.random.Generator:
    """Counter-based random stream keyed by (root_seed, path).

    Identical (seed, path) pairs give identical streams; distinct paths give
    statistically independent streams, so parallel tasks can each derive their
    own stream without coordination.
    """
    ss = np.random.SeedSequence(entropy=int(root_seed),
                                spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing observation times t_1 < ... < t_T in [0, 1]."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if t.size < 2:
            raise SchemaError("time grid needs at least two times")
        if not np.all(np.isfinite(t)):
            raise SchemaError("time grid contains non-finite times")
        if t.min() < 0.0 or t.max() > 1.0:
            raise SchemaError("time grid must lie in [0, 1]; normalize first")
        d = np.diff(t)
        if np.any(d == 0):
            raise SchemaError("duplicated times in grid")
        if np.any(d < 0):
            raise SchemaError("times not strictly increasing (sort first)")
        object.__setattr__(self, "times", _freeze(t))

    @property
    def T(self) -> int:
        return self.times.size

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)

    @classmethod
    def uniform(cls, T: int) -> "TimeGrid":
        return cls(np.linspace(0.0, 1.0, T))

    @classmethod
    def from_times(cls, times, normalize: bool = False):
        """Sort raw times (rejecting duplicates); optionally rescale to [0, 1].

        Returns (grid, (offset, scale)) where original = offset + scale * t.
        """
        t = np.sort(np.asarray(times, dtype=np.float64).reshape(-1))
        if t.size >= 2 and np.any(np.diff(t) == 0):
            raise SchemaError("duplicated times in grid")
        offset, scale = 0.0, 1.0
        if normalize:
            lo, hi = float(t[0]), float(t[-1])
            if hi <= lo:
                raise SchemaError("degenerate time range")
            offset, scale = lo, hi - lo
            t = (t - lo) / (hi - lo)
        return cls(t), (offset, scale)


@dataclass(frozen=True)
class TemporalDataset:
    """Observed snapshots: one point set (N_i, d) per grid index."""

    grid: TimeGrid
    snapshots: tuple[np.ndarray, ...]

    def __post_init__(self):
        snaps = tuple(np.asarray(s, dtype=np.float64) for s in self.snapshots)
        if len(snaps) != self.grid.T:
            raise SchemaError(
                f"expected {self.grid.T} snapshots, got {len(snaps)}")
        dims = set()
        fixed = []
        for i, s in enumerate(snaps):
            if s.ndim != 2 or s.shape[0] == 0:
                raise SchemaError(f"snapshot {i} is empty or not 2-d")
            if not np.all(np.isfinite(s)):
                raise SchemaError(f"snapshot {i} has non-finite points")
            dims.add(s.shape[1])
            fixed.append(_freeze(s))
        if len(dims) != 1:
            raise SchemaError(f"mixed point dimensions: {sorted(dims)}")
        object.__setattr__(self, "snapshots", tuple(fixed))

    @property
    def dim(self) -> int:
        return self.snapshots[0].shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.shape[0] for s in self.snapshots])


@dataclass(frozen=True)
class ParticleSystem:
    """m particles per time marginal, stored as a (T, m, d) array."""

    grid: TimeGrid
    particles: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=np.float64)
        if p.ndim != 3:
            raise SchemaError("particles must have shape (T, m, d)")
        if p.shape[0] != self.grid.T:
            raise SchemaError("particle marginal count does not match grid")
        if not np.all(np.isfinite(p)):
            raise SchemaError("particles contain non-finite coordinates")
        object.__setattr__(self, "particles", _freeze(p))

    @property
    def m(self) -> int:
        return self.particles.shape[1]

    @property
    def dim(self) -> int:
        return self.particles.shape[2]

    def replace(self, particles: np.ndarray) -> "ParticleSystem":
        return ParticleSystem(self.grid, particles)


@dataclass(frozen=True)
class TrajectorySet:
    """Paths realized at the grid times: values array of shape (n, T, d)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[1] != self.grid.T:
            raise SchemaError("trajectory values must have shape (n, T, d)")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


def validate_dataset(raw: TemporalDataset, radius: float) -> TemporalDataset:
    """Check that every point lies in the ball of the given radius."""
    if radius <= 0:
        raise ParameterError("radius must be positive")
    for i, snap in enumerate(raw.snapshots):
        norms = np.linalg.norm(snap, axis=1)
        bad = np.flatnonzero(norms > radius)
        if bad.size:
            j = int(bad[0])
            raise DomainViolationError(
                f"point {j} at time index {i} has norm "
                f"{norms[j]:.6g} > radius {radius:.6g}")
    return raw


@dataclass(frozen=True)
class Phase:
    """One annealing phase of the optimizer."""

    iterations: int
    eta: float
    tau: float

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("phase iterations must be >= 0")
        if self.eta <= 0:
            raise ConfigError("phase eta must be positive")
        if self.tau < 0:
            raise ConfigError("phase tau must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    """Optimizer configuration.

    clip=None disables both clipping and gradient noise (non-private mode).
    lam=None uses lambda = dt_i per interval, i.e. a fit factor of 1.
    divisor selects the averaging divisor for subsampled fit gradients:
    "expected" uses max(1, rho * N_i); "realized" uses |subsample| as in the
    literal update rule.
    """

    eta: float = 0.01
    tau: float = 1.0
    iterations: int = 100
    subsample_rate: float = 1.0
    clip: float | None = 1.0
    lam: float | None = None
    sigma: float = 0.05
    radius: float = 1.0
    particles: int = 50
    seed: int = 0
    sinkhorn_tol: float = 1e-9
    sinkhorn_max_iter: int = 20000
    divisor: str = "expected"
    phases: tuple[Phase, ...] = ()

    def __post_init__(self):
        if self.eta <= 0 or self.tau < 0 or self.sigma <= 0 or self.radius <= 0:
            raise ConfigError("eta, sigma, radius must be > 0 and tau >= 0")
        if self.lam is not None and self.lam <= 0:
            raise ConfigError("lam must be positive when given")
        if self.clip is not None and not (self.clip > 0):
            raise ConfigError("clip must be positive or None")
        if not (0.0 < self.subsample_rate <= 1.0):
            raise ConfigError("subsample_rate must be in (0, 1]")
        if self.iterations < 0 or self.particles < 1:
            raise ConfigError("iterations >= 0 and particles >= 1 required")
        if self.divisor not in ("expected", "realized"):
            raise ConfigError("divisor must be 'expected' or 'realized'")

    def phase_list(self) -> tuple[Phase, ...]:
        if self.phases:
            return self.phases
        return (Phase(self.iterations, self.eta, self.tau),)


_RUN_KEYS = {
    "eta", "tau", "iterations", "subsample_rate", "clip", "lam", "sigma",
    "radius", "particles", "seed", "sinkhorn_tol", "sinkhorn_max_iter",
    "divisor",
}
_PHASE_KEYS = {"iterations", "eta", "tau"}
_INIT_KEYS = {"mode", "eps", "delta", "k", "lloyd_iters", "jitter",
              "mean", "std"}
_SIM_KEYS = {"kind", "n_per_mode", "timesteps", "noise_var", "drift", "a",
             "center", "tau_true", "dim", "n_paths", "steps_per_gap", "x0",
             "init_std", "seed"}
_SECTIONS = {"run", "phase", "init", "simulate"}


@dataclass(frozen=True)
class InitSpec:
    """Initializer selection for cmd_fit."""

    mode: str = "gaussian"  # none | gaussian | mean | cluster
    eps: float = 1.0
    delta: float = 1e-3
    k: int = 3
    lloyd_iters: int = 3
    jitter: float = 0.0
    mean: tuple[float, ...] = (0.5, 0.5)
    std: float = np.sqrt(0.2)


def _check_keys(section: str, table: dict, allowed: set):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def parse_config(text: str) -> dict:
    """Parse a TOML config into {'run': RunConfig, 'init': InitSpec, 'simulate': dict|None}.

    Unknown sections or keys are errors.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config parse error: {e}") from e
    unknown = sorted(set(doc) - _SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")

    run_tbl = doc.get("run", {})
    _check_keys("run", run_tbl, _RUN_KEYS)
    phases = []
    for i, ph in enumerate(doc.get("phase", [])):
        _check_keys(f"phase[{i}]", ph, _PHASE_KEYS)
        phases.append(Phase(int(ph["iterations"]), float(ph["eta"]),
                            float(ph["tau"])))
    kwargs = dict(run_tbl)
    if "clip" in kwargs and kwargs["clip"] in ("inf", 0):
        kwargs["clip"] = None
    config = RunConfig(phases=tuple(phases), **kwargs)

    init_tbl = doc.get("init", {})
    _check_keys("init", init_tbl, _INIT_KEYS)
    if "mean" in init_tbl:
        init_tbl["mean"] = tuple(float(v) for v in init_tbl["mean"])
    init = InitSpec(**init_tbl)
    if init.mode not in ("none", "gaussian", "mean", "cluster"):
        raise ConfigError(f"unknown init mode {init.mode!r}")

    sim_tbl = doc.get("simulate")
    if sim_tbl is not None:
        _check_keys("simulate", sim_tbl, _SIM_KEYS)
    return {"run": config, "init": init, "simulate": sim_tbl}


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())

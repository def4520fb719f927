"""Gaussian-DP accountant: subsampled noisy descent, conversions, ledger."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .core import ParameterError, TrajDPError


class LedgerError(TrajDPError):
    pass


@dataclass(frozen=True)
class GdpParam:
    """mu-GDP parameter; mu = 0 is perfect privacy."""

    mu: float

    def __post_init__(self):
        if self.mu < 0:
            raise ParameterError("mu must be >= 0")


def gdp_of_dpsgd(rho: float, K: int, tau: float) -> float:
    """Asymptotic GDP of K Poisson-subsampled noisy gradient iterations.

    mu = rho * sqrt(K * (e^{1/tau^2} - 1)). Valid for K >> 1; outputs for
    K < 50 are flagged as approximate via a warning. tau = 0 yields
    infinity (no privacy).
    """
    if not (0.0 < rho <= 1.0):
        raise ParameterError("rho must be in (0, 1]")
    if K < 0:
        raise ParameterError("K must be >= 0")
    if K == 0:
        return 0.0
    if tau <= 0:
        return math.inf
    if K < 50:
        warnings.warn("GDP formula is asymptotic in K; K < 50 is approximate",
                      stacklevel=2)
    return rho * math.sqrt(K * math.expm1(1.0 / (tau * tau)))


def gdp_to_eps_delta(mu: float, eps: float) -> float:
    """delta(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)."""
    if mu <= 0:
        raise ParameterError("mu must be positive")
    if eps < 0:
        raise ParameterError("eps must be >= 0")
    if not math.isfinite(mu):
        return 1.0
    # evaluate e^eps * Phi(z) in log space to keep >= 1e-12 accuracy
    z1 = -eps / mu + mu / 2.0
    z2 = -eps / mu - mu / 2.0
    term2 = math.exp(eps + float(norm.logcdf(z2)))
    delta = float(norm.cdf(z1)) - term2
    return min(max(delta, 0.0), 1.0)


def eps_for_delta(mu: float, delta_target: float, tol: float = 1e-6) -> float:
    """Smallest eps >= 0 with delta(eps) <= delta_target, by bisection."""
    if not (0.0 < delta_target < 1.0):
        raise ParameterError("delta_target must be in (0, 1)")
    if mu == 0.0:
        return 0.0
    if not math.isfinite(mu):
        return math.inf
    if gdp_to_eps_delta(mu, 0.0) <= delta_target:
        return 0.0
    lo, hi = 0.0, 1.0
    while gdp_to_eps_delta(mu, hi) > delta_target:
        hi *= 2.0
        if hi > 1e6:
            raise ParameterError("eps search did not bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gdp_to_eps_delta(mu, mid) <= delta_target:
            hi = mid
        else:
            lo = mid
    return hi


def gaussian_mechanism_sigma(sensitivity: float, eps: float,
                             delta: float) -> float:
    """Noise scale sigma = sensitivity * sqrt(2 ln(1.25/delta)) / eps."""
    if sensitivity <= 0:
        raise ParameterError("sensitivity must be positive")
    if eps <= 0 or not (0.0 < delta < 1.0):
        raise ParameterError("need eps > 0 and delta in (0, 1)")
    if eps >= 1.0:
        warnings.warn("Gaussian mechanism calibration stated for eps < 1",
                      stacklevel=2)
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


@dataclass
class LedgerEntry:
    """One mechanism invocation.

    kind: "gdp" (carries mu), "eps_delta" (carries eps, delta), or
    "postprocess" (costs nothing). Entries sharing a parallel_group compose
    by maximum; their partition tags must be pairwise disjoint.
    """

    label: str
    kind: str
    mu: float = 0.0
    eps: float = 0.0
    delta: float = 0.0
    partition: str | None = None
    parallel_group: str | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"label": self.label, "kind": self.kind, "mu": self.mu,
                "eps": self.eps, "delta": self.delta,
                "partition": self.partition,
                "parallel_group": self.parallel_group, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "LedgerEntry":
        return cls(label=d["label"], kind=d["kind"], mu=d.get("mu", 0.0),
                   eps=d.get("eps", 0.0), delta=d.get("delta", 0.0),
                   partition=d.get("partition"),
                   parallel_group=d.get("parallel_group"),
                   meta=d.get("meta", {}))


@dataclass
class PrivacyLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def add(self, entry: LedgerEntry) -> None:
        self.entries.append(entry)

    def extend(self, entries) -> None:
        self.entries.extend(entries)


@dataclass
class ComposedReport:
    """Totals for a ledger: a GDP path and a basic-composition path."""

    mu_total: float
    eps_basic: float
    delta_basic: float
    breakdown: list[dict]

    def total_eps(self, delta: float) -> float:
        """Total eps at the requested delta for the mixed ledger.

        The (eps, delta) entries contribute (eps_basic, delta_basic) by basic
        composition; the GDP part is converted at the remaining delta budget.
        """
        if self.mu_total == 0.0:
            return self.eps_basic
        remaining = delta - self.delta_basic
        if remaining <= 0:
            raise ParameterError(
                f"delta {delta} not larger than ledger delta {self.delta_basic}")
        return self.eps_basic + eps_for_delta(self.mu_total, remaining)


def ledger_compose(ledger: PrivacyLedger) -> ComposedReport:
    """Compose a ledger: sqrt-sum-of-squares for GDP entries, summation for
    (eps, delta) entries, maximum within parallel groups, zero for
    post-processing."""
    effective: list[LedgerEntry] = []
    groups: dict[str, list[LedgerEntry]] = {}
    for e in ledger.entries:
        if e.kind == "postprocess":
            continue
        if e.kind not in ("gdp", "eps_delta"):
            raise LedgerError(f"unknown entry kind {e.kind!r}")
        if e.parallel_group is None:
            effective.append(e)
        else:
            groups.setdefault(e.parallel_group, []).append(e)

    for name, members in sorted(groups.items()):
        tags = [m.partition for m in members]
        if any(t is None for t in tags) or len(set(tags)) != len(tags):
            raise LedgerError(
                f"parallel group {name!r} needs pairwise-disjoint partitions")
        kinds = {m.kind for m in members}
        if len(kinds) != 1:
            raise LedgerError(f"mixed kinds inside parallel group {name!r}")
        kind = kinds.pop()
        if kind == "gdp":
            effective.append(LedgerEntry(label=f"parallel:{name}", kind="gdp",
                                         mu=max(m.mu for m in members)))
        else:
            effective.append(LedgerEntry(label=f"parallel:{name}",
                                         kind="eps_delta",
                                         eps=max(m.eps for m in members),
                                         delta=max(m.delta for m in members)))

    mu_sq = sum(e.mu ** 2 for e in effective if e.kind == "gdp")
    mu_total = math.sqrt(mu_sq) if math.isfinite(mu_sq) else math.inf
    eps_basic = sum(e.eps for e in effective if e.kind == "eps_delta")
    delta_basic = sum(e.delta for e in effective if e.kind == "eps_delta")
    breakdown = [e.to_dict() for e in effective]
    return ComposedReport(mu_total, eps_basic, delta_basic, breakdown)


def report_json(ledger: PrivacyLedger, deltas=()) -> dict:
    """Privacy report: {"mu_gdp", "pairs", "entries"}."""
    comp = ledger_compose(ledger)
    pairs = []
    for d in deltas:
        pairs.append({"eps": comp.total_eps(float(d)), "delta": float(d)})
    if not deltas and (comp.eps_basic > 0 or comp.delta_basic > 0):
        pairs.append({"eps": comp.eps_basic, "delta": comp.delta_basic})
    return {
        "mu_gdp": comp.mu_total,
        "eps_basic": comp.eps_basic,
        "delta_basic": comp.delta_basic,
        "pairs": pairs,
        "entries": [e.to_dict() for e in ledger.entries],
    }


def write_report(path, ledger: PrivacyLedger, deltas=()) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_json(ledger, deltas), f, sort_keys=True, indent=2)


def read_ledger(path) -> PrivacyLedger:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return PrivacyLedger([LedgerEntry.from_dict(d) for d in doc["entries"]])

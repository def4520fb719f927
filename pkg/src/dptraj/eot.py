"""Entropic optimal transport between particle marginals.

Log-domain Sinkhorn with dual potentials, an exact small-instance LP oracle,
barycentric projections, and composition of per-interval plans into a Markov
chain coupling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .core import ParameterError, TrajDPError


class NumericError(TrajDPError):
    pass


class CapacityError(TrajDPError):
    pass


class DegeneratePlanError(TrajDPError):
    pass


class ChainConsistencyError(TrajDPError):
    pass


EXACT_OT_CAP = 10**6


def half_sqdist_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """C[j, k] = 0.5 * ||y_k - x_j||^2."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d2 = (np.sum(x * x, axis=1)[:, None] + np.sum(y * y, axis=1)[None, :]
          - 2.0 * x @ y.T)
    return 0.5 * np.maximum(d2, 0.0)


@dataclass
class TransportPlan:
    """Coupling between two discrete marginals, with dual potentials.

    gamma[j, k] = a[j] * b[k] * exp((phi[j] + psi[k] - C[j, k]) / eps) at
    convergence (eps > 0); exact plans carry eps = 0 and no duals.
    """

    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    source: np.ndarray
    target: np.ndarray
    cost: np.ndarray
    eps: float
    phi: np.ndarray | None = None
    psi: np.ndarray | None = None
    residual: float = 0.0
    converged: bool = True

    def transport_cost(self) -> float:
        return float(np.sum(self.gamma * self.cost))

    def entropic_value(self) -> float:
        """<gamma, C> + eps * KL(gamma | a x b)."""
        if self.eps == 0.0:
            return self.transport_cost()
        ab = self.a[:, None] * self.b[None, :]
        g = self.gamma
        mask = g > 0
        kl = float(np.sum(g[mask] * np.log(g[mask] / ab[mask])))
        return self.transport_cost() + self.eps * kl


def sinkhorn(source: np.ndarray, a: np.ndarray, target: np.ndarray,
             b: np.ndarray, eps: float, tol: float = 1e-9,
             max_iter: int = 20000, cost: np.ndarray | None = None,
             warm: tuple[np.ndarray, np.ndarray] | None = None) -> TransportPlan:
    """Log-domain Sinkhorn for the entropic OT plan.

    Stops when the L-inf marginal violation is <= tol; returns the best
    iterate with converged=False if max_iter is hit. Duals are returned with
    the translation fixed by mean(phi) = 0.
    """
    if eps <= 0:
        raise ParameterError("sinkhorn needs eps > 0")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ParameterError("weights must be positive")
    if cost is None:
        cost = half_sqdist_cost(source, target)
    if not np.all(np.isfinite(cost)):
        raise NumericError("non-finite cost entries")

    la, lb = np.log(a), np.log(b)
    if warm is not None and warm[0] is not None:
        phi, psi = np.array(warm[0], dtype=float), np.array(warm[1], dtype=float)
    else:
        phi = np.zeros(a.size)
        psi = np.zeros(b.size)

    def _lse(M, axis):
        mx = M.max(axis=axis)
        return np.log(np.exp(M - np.expand_dims(mx, axis)).sum(axis=axis)) + mx

    def make_sweep(e):
        # row/col log-kernels with cost/e hoisted out of the iteration
        row = lb[None, :] - cost / e   # add psi/e, lse over axis 1
        col = la[:, None] - cost / e   # add phi/e, lse over axis 0

        def sweep(phi, psi):
            phi = -e * _lse(row + psi[None, :] / e, 1)
            psi = -e * _lse(col + phi[:, None] / e, 0)
            return phi, psi

        def resid(phi, psi):
            g = np.exp(la[:, None] + lb[None, :]
                       + (phi[:, None] + psi[None, :] - cost) / e)
            return max(float(np.abs(g.sum(axis=1) - a).max()),
                       float(np.abs(g.sum(axis=0) - b).max()))

        return sweep, resid

    # epsilon scaling: anneal the regularizer down to eps with warm-started
    # duals; cheap and avoids the slow small-eps contraction from cold starts
    scale = float(np.max(cost)) if np.max(cost) > 0 else 1.0
    e = scale
    while e > eps * 4.0:
        sweep, _ = make_sweep(e)
        for _ in range(10):
            phi, psi = sweep(phi, psi)
        e *= 0.25

    sweep, resid = make_sweep(eps)
    residual = np.inf
    converged = False
    check_every = 8
    it = 0
    prev = None
    while it < max_iter:
        burst = min(check_every, max_iter - it)
        for _ in range(burst):
            phi, psi = sweep(phi, psi)
        it += burst
        residual = resid(phi, psi)
        if residual <= tol:
            converged = True
            break
        # near-degenerate instances contract linearly with rate close to 1;
        # the dual increments are then nearly geometric, so extrapolate them
        cur = np.concatenate([phi, psi])
        if prev is not None:
            d1 = cur - prev[0]
            d0 = prev[0] - prev[1]
            den = float(d0 @ d0)
            if den > 0:
                rho = float(d1 @ d0) / den
                if 0.5 < rho < 1.0 - 1e-9:
                    ext = cur + d1 * (rho / (1.0 - rho))
                    phi_e, psi_e = sweep(ext[:phi.size], ext[phi.size:])
                    if resid(phi_e, psi_e) < residual:
                        phi, psi = phi_e, psi_e
                        cur = np.concatenate([phi, psi])
                elif rho >= 1.0 - 1e-9:
                    # duals drifting at constant speed along a tie direction:
                    # line-search doubling jumps along the drift until the
                    # residual stops improving (or holding steady)
                    best_r, best = residual, (phi, psi)
                    s = 4.0
                    while s < 1e9:
                        ext = cur + s * d1
                        phi_e, psi_e = sweep(ext[:phi.size], ext[phi.size:])
                        r = resid(phi_e, psi_e)
                        if r <= best_r * 1.01:
                            if r < best_r:
                                best_r, best = r, (phi_e, psi_e)
                            s *= 4.0
                        else:
                            break
                    phi, psi = best
                    residual = best_r
                    if residual <= tol:
                        converged = True
                        break
                    cur = np.concatenate([phi, psi])
            prev = (cur, prev[0])
        else:
            prev = (cur, cur)

    shift = float(phi.mean())
    phi = phi - shift
    psi = psi + shift
    g = np.exp(la[:, None] + lb[None, :]
               + (phi[:, None] + psi[None, :] - cost) / eps)
    if residual > tol:
        # near-degenerate instances stall; project onto the feasible polytope
        g = _round_to_feasible(g, a, b)
        residual = max(float(np.abs(g.sum(axis=1) - a).max()),
                       float(np.abs(g.sum(axis=0) - b).max()))
        converged = residual <= tol
    return TransportPlan(g, a, b, np.atleast_2d(source), np.atleast_2d(target),
                         cost, eps, phi, psi, residual, converged)


def _round_to_feasible(g: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rescale rows/columns then add a rank-one patch so marginals are exact."""
    r = g.sum(axis=1)
    g = g * np.minimum(1.0, a / np.maximum(r, 1e-300))[:, None]
    c = g.sum(axis=0)
    g = g * np.minimum(1.0, b / np.maximum(c, 1e-300))[None, :]
    err_r = a - g.sum(axis=1)
    err_c = b - g.sum(axis=0)
    total = err_r.sum()
    if total > 0:
        g = g + np.outer(err_r, err_c) / total
    return g


def exact_ot(source: np.ndarray, a: np.ndarray, target: np.ndarray,
             b: np.ndarray, cost: np.ndarray | None = None) -> TransportPlan:
    """Vertex solution of the transportation LP (eps = 0, no duals)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = a.size, b.size
    if n * m > EXACT_OT_CAP:
        raise CapacityError(f"exact OT instance too large: {n}x{m}")
    if cost is None:
        cost = half_sqdist_cost(source, target)

    uniform = (n == m and np.allclose(a, 1.0 / n) and np.allclose(b, 1.0 / m))
    if uniform:
        rows, cols = linear_sum_assignment(cost)
        g = np.zeros((n, m))
        g[rows, cols] = 1.0 / n
    else:
        # flatten gamma row-major; marginal constraints (last one redundant)
        from scipy.sparse import coo_matrix

        var = np.arange(n * m)
        rows = np.concatenate([var // m, n + (var % m)])
        cols = np.concatenate([var, var])
        keep = rows < n + m - 1
        A_eq = coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])),
                          shape=(n + m - 1, n * m)).tocsr()
        rhs = np.concatenate([a, b[:-1]])
        res = linprog(cost.reshape(-1), A_eq=A_eq, b_eq=rhs,
                      bounds=(0, None), method="highs")
        if not res.success:
            raise NumericError(f"transportation LP failed: {res.message}")
        g = res.x.reshape(n, m)
    return TransportPlan(g, a, b, np.atleast_2d(source), np.atleast_2d(target),
                         cost, 0.0, None, None, 0.0, True)


def barycentric_project(plan: TransportPlan, direction: str = "fwd") -> np.ndarray:
    """Conditional means of the coupling.

    fwd: for each source j, sum_k gamma[j,k] y_k / a[j]; bwd symmetric.
    """
    if direction == "fwd":
        mass = plan.gamma.sum(axis=1)
        if np.any(mass <= 0):
            raise DegeneratePlanError("zero row mass in plan")
        return (plan.gamma @ plan.target) / mass[:, None]
    if direction == "bwd":
        mass = plan.gamma.sum(axis=0)
        if np.any(mass <= 0):
            raise DegeneratePlanError("zero column mass in plan")
        return (plan.gamma.T @ plan.source) / mass[:, None]
    raise ParameterError(f"unknown direction {direction!r}")


@dataclass
class MarkovChainCoupling:
    """Initial weights plus row-stochastic kernels K_1, ..., K_{T-1}."""

    initial: np.ndarray
    kernels: list[np.ndarray]

    @property
    def T(self) -> int:
        return len(self.kernels) + 1

    def marginal(self, i: int) -> np.ndarray:
        w = self.initial
        for K in self.kernels[:i]:
            w = w @ K
        return w


def compose_plans(plans: list[TransportPlan],
                  tol: float = 1e-6) -> MarkovChainCoupling:
    """Chain consecutive plans: kernels K_i[j, k] = gamma_i[j, k] / a_i[j]."""
    if not plans:
        raise ParameterError("need at least one plan to compose")
    kernels = []
    for i, plan in enumerate(plans):
        if i > 0:
            mism = float(np.abs(plans[i - 1].b - plan.a).max())
            if mism > tol:
                raise ChainConsistencyError(
                    f"marginal mismatch {mism:.3g} between plans {i-1} and {i}")
        mass = plan.gamma.sum(axis=1)
        if np.any(mass <= 0):
            raise DegeneratePlanError(f"zero row mass in plan {i}")
        kernels.append(plan.gamma / mass[:, None])
    return MarkovChainCoupling(plans[0].a.copy(), kernels)


# ---------------------------------------------------------------------------
# Debug dump


def plan_to_dict(plan: TransportPlan) -> dict:
    return {
        "gamma": plan.gamma.reshape(-1).tolist(),
        "shape": list(plan.gamma.shape),
        "a": plan.a.tolist(),
        "b": plan.b.tolist(),
        "source": plan.source.tolist(),
        "target": plan.target.tolist(),
        "eps": plan.eps,
        "phi": None if plan.phi is None else plan.phi.tolist(),
        "psi": None if plan.psi is None else plan.psi.tolist(),
        "residual": plan.residual,
        "converged": plan.converged,
    }


def plan_from_dict(d: dict) -> TransportPlan:
    shape = tuple(d["shape"])
    source = np.asarray(d["source"], dtype=float)
    target = np.asarray(d["target"], dtype=float)
    return TransportPlan(
        gamma=np.asarray(d["gamma"], dtype=float).reshape(shape),
        a=np.asarray(d["a"], dtype=float),
        b=np.asarray(d["b"], dtype=float),
        source=source,
        target=target,
        cost=half_sqdist_cost(source, target),
        eps=float(d["eps"]),
        phi=None if d["phi"] is None else np.asarray(d["phi"], dtype=float),
        psi=None if d["psi"] is None else np.asarray(d["psi"], dtype=float),
        residual=float(d["residual"]),
        converged=bool(d["converged"]),
    )


def write_plans(path, plans: list[TransportPlan], meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, "plans": [plan_to_dict(p) for p in plans]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)


def read_plans(path) -> tuple[list[TransportPlan], dict]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return [plan_from_dict(d) for d in doc["plans"]], doc.get("meta", {})

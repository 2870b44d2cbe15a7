"""Per-timestep patrol allocation under a group-parity band.

For risks ``mu`` the programme is::

    max  mu . p
    s.t. sum(p) <= B,  0 <= p_v <= B,
         (1 - eps) * mean(p[maj]) <= mean(p[min]) <= (1 + eps) * mean(p[maj])

solved exactly with HiGHS (dual simplex). Degenerate inputs fall back to
proportional allocation.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import io

log = logging.getLogger(__name__)

BUDGET = 60.0
EPSILON = 0.05
MINORITY_THRESHOLD = 0.5
DIR_DELTA = 1e-6

OPTIMAL = "optimal"
FALLBACK = "fallback"


@dataclass
class AllocationProblem:
    risks: np.ndarray
    minority_mask: np.ndarray
    budget: float = BUDGET
    epsilon: float = EPSILON

    def __post_init__(self):
        self.risks = np.asarray(self.risks, dtype=np.float64)
        self.minority_mask = np.asarray(self.minority_mask, dtype=bool)
        if self.risks.shape != self.minority_mask.shape:
            raise ValueError("risks and minority_mask differ in shape")
        if not np.all(np.isfinite(self.risks)):
            raise ValueError("risks must be finite")


@dataclass
class AllocationResult:
    p: np.ndarray
    status: str
    objective: float
    dir: float
    degenerate: bool = False


def minority_mask(pct_minority, threshold: float = MINORITY_THRESHOLD) -> np.ndarray:
    return np.asarray(pct_minority, dtype=np.float64) >= threshold


def dir_of(p, mask, delta: float = DIR_DELTA) -> tuple[float, bool]:
    """Mean minority allocation over mean non-minority allocation.

    Returns ``(dir, degenerate)``. When the non-minority mean is below
    ``delta`` the denominator becomes ``mean + delta`` and the result is
    flagged degenerate.
    """
    p = np.asarray(p, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.all() or not mask.any():
        raise ValueError("both groups must be non-empty")
    p_min = p[mask].mean()
    p_maj = p[~mask].mean()
    if p_maj < delta:
        return float(p_min / (p_maj + delta)), True
    return float(p_min / p_maj), False


def proportional(risks, budget: float) -> np.ndarray:
    risks = np.clip(np.asarray(risks, dtype=np.float64), 0.0, None)
    total = risks.sum()
    if total <= 0:
        return np.full(risks.size, budget / risks.size)
    return budget * risks / total


def _constraints(mask: np.ndarray, budget: float, epsilon: float):
    n = mask.size
    rows = [np.ones(n)]
    rhs = [budget]
    if np.isfinite(epsilon):
        m, k = mask.sum(), (~mask).sum()
        mean_min = np.where(mask, 1.0 / m, 0.0)
        mean_maj = np.where(~mask, 1.0 / k, 0.0)
        rows.append((1 - epsilon) * mean_maj - mean_min)  # lower band
        rows.append(mean_min - (1 + epsilon) * mean_maj)  # upper band
        rhs += [0.0, 0.0]
    return np.array(rows), np.array(rhs)


def _solve(c, A_ub, b_ub, budget):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(0.0, budget), method="highs-ds")
    return res


def solve_allocation(prob: AllocationProblem, tie_break: bool = True) -> AllocationResult:
    """Optimal vertex of the allocation LP, or the proportional fallback.

    With ``tie_break`` and repeated risk values, a second LP over the optimal
    face prefers lower zone indices (weights ``2**-v``), so equal-objective
    solutions resolve the same way on every call.
    """
    mu, mask, B, eps = prob.risks, prob.minority_mask, prob.budget, prob.epsilon
    n = mu.size
    banded = np.isfinite(eps)
    if banded and (mask.all() or not mask.any()):
        warnings.warn("parity band needs both groups; using proportional fallback", stacklevel=2)
        return _fallback(mu, mask, B)
    if np.clip(mu, 0, None).sum() <= 0:
        return _fallback(mu, mask, B)

    A_ub, b_ub = _constraints(mask, B, eps)
    res = _solve(-mu, A_ub, b_ub, B)
    if res.status != 0:
        log.warning("allocation LP status %s (%s); falling back", res.status, res.message)
        return _fallback(mu, mask, B)
    p = res.x
    best = float(mu @ p)
    if tie_break and np.unique(mu).size < n:
        floor = best - 1e-12 * max(1.0, abs(best))
        A2 = np.vstack([A_ub, -mu])
        b2 = np.append(b_ub, -floor)
        weights = 2.0 ** -np.arange(n)
        res2 = _solve(-weights, A2, b2, B)
        if res2.status == 0:
            p = res2.x
    p = np.clip(p, 0.0, B)
    d, degenerate = dir_of(p, mask) if (mask.any() and not mask.all()) else (float("nan"), True)
    return AllocationResult(p, OPTIMAL, float(mu @ p), d, degenerate)


def _fallback(mu, mask, B) -> AllocationResult:
    p = proportional(mu, B)
    if mask.any() and not mask.all():
        d, degenerate = dir_of(p, mask)
    else:
        d, degenerate = float("nan"), True
    return AllocationResult(p, FALLBACK, float(mu @ p), d, degenerate)


@dataclass
class AllocationSeries:
    P: np.ndarray  # (T, N)
    status: list
    objective: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def status_counts(self) -> dict:
        return {OPTIMAL: self.status.count(OPTIMAL), FALLBACK: self.status.count(FALLBACK)}

    @property
    def optimal_fraction(self) -> float:
        return self.status.count(OPTIMAL) / max(len(self.status), 1)

    def save(self, path) -> None:
        path = Path(path)
        n = self.P.shape[1]
        io.write_csv(path.with_suffix(".csv"), [f"z{v}" for v in range(n)], self.P.tolist())
        doc = {"status": self.status, "status_counts": self.status_counts, "objective": self.objective.tolist()}
        doc.update(self.meta)
        io.write_json(path.with_suffix(".json"), doc)

    @classmethod
    def load(cls, path) -> "AllocationSeries":
        path = Path(path)
        P = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        doc = io.read_json(path.with_suffix(".json"))
        meta = {k: v for k, v in doc.items() if k not in ("status", "status_counts", "objective")}
        return cls(P, list(doc["status"]), np.array(doc["objective"]), meta)


def allocate_all(risk_matrix, mask, budget: float = BUDGET, epsilon: float = EPSILON, tie_break: bool = True) -> AllocationSeries:
    """Solve every row of a (T, N) risk matrix independently."""
    R = np.asarray(risk_matrix, dtype=np.float64)
    if R.ndim != 2:
        raise ValueError("risk_matrix must be (T, N)")
    mask = np.asarray(mask, dtype=bool)
    P = np.zeros_like(R)
    status = []
    obj = np.zeros(R.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for t, row in enumerate(R):
            res = solve_allocation(AllocationProblem(row, mask, budget, epsilon), tie_break)
            P[t] = res.p
            status.append(res.status)
            obj[t] = res.objective
    return AllocationSeries(P, status, obj, {"budget": budget, "epsilon": epsilon})

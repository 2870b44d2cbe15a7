import itertools
import math
import warnings

import numpy as np
import pytest

from fairpatrol.allocator import (
    FALLBACK,
    OPTIMAL,
    AllocationProblem,
    AllocationSeries,
    allocate_all,
    dir_of,
    minority_mask,
    proportional,
    solve_allocation,
)


def constraint_rows(mask, B, eps):
    """Every inequality ``a . p <= b`` of the allocation LP."""
    n = mask.size
    rows, rhs = [np.ones(n)], [B]
    for v in range(n):
        e = np.zeros(n)
        e[v] = 1
        rows += [e, -e]
        rhs += [B, 0.0]
    if math.isfinite(eps):
        mmin = np.where(mask, 1 / mask.sum(), 0)
        mmaj = np.where(~mask, 1 / (~mask).sum(), 0)
        rows += [(1 - eps) * mmaj - mmin, mmin - (1 + eps) * mmaj]
        rhs += [0.0, 0.0]
    return np.array(rows), np.array(rhs)


def brute_force_optimum(mu, mask, B, eps):
    """Best objective over all vertices: every N-subset of tight constraints."""
    A, b = constraint_rows(mask, B, eps)
    n = mu.size
    best = -np.inf
    combos = np.array(list(itertools.combinations(range(len(b)), n)))
    As = A[combos]
    bs = b[combos]
    ok = np.abs(np.linalg.det(As)) > 1e-12
    xs = np.linalg.solve(As[ok], bs[ok][..., None])[..., 0]
    feasible = np.all(xs @ A.T <= b + 1e-9, axis=1)
    if feasible.any():
        best = float((xs[feasible] @ mu).max())
    return best


def assert_feasible(p, mask, B, eps, tol=1e-6):
    assert p.sum() <= B + tol
    assert p.min() >= -tol and p.max() <= B + tol
    if math.isfinite(eps):
        a, b = p[mask].mean(), p[~mask].mean()
        assert (1 - eps) * b - tol <= a <= (1 + eps) * b + tol


def test_random_instances_match_vertex_enumeration():
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(2, 7))
        mask = np.zeros(n, dtype=bool)
        mask[rng.choice(n, int(rng.integers(1, n)), replace=False)] = True
        mu = rng.uniform(0, 5, n)
        if i % 5 == 0:
            mu = np.round(mu)  # repeated values and zeros
        if mu.sum() == 0:
            mu[0] = 1.0
        eps = [0.05, 0.0, 0.2, np.inf][i % 4]
        B = float(rng.choice([60.0, 10.0, 1.0]))
        res = solve_allocation(AllocationProblem(mu, mask, B, eps))
        assert res.status == OPTIMAL
        assert_feasible(res.p, mask, B, eps)
        opt = brute_force_optimum(mu, mask, B, eps)
        rel = abs(res.objective - opt) / max(abs(opt), 1e-300)
        worst = max(worst, rel)
    assert worst < 1e-8


def test_four_zone_example():
    mu = np.array([5.0, 1.0, 4.0, 1.0])
    mask = np.array([True, True, False, False])
    res = solve_allocation(AllocationProblem(mu, mask))
    expected = 60 * (5 * 1.05 + 4) / 2.05
    assert res.objective == pytest.approx(expected, rel=1e-10)
    assert res.objective == pytest.approx(brute_force_optimum(mu, mask, 60.0, 0.05), rel=1e-10)
    np.testing.assert_allclose(res.p, [63 / 2.05, 0, 60 / 2.05, 0], atol=1e-8)
    assert res.dir == pytest.approx(1.05)


def test_unconstrained_puts_budget_on_argmax():
    mu = np.array([0.3, 2.0, 1.1])
    res = solve_allocation(AllocationProblem(mu, np.array([True, False, False]), epsilon=np.inf))
    np.testing.assert_allclose(res.p, [0, 60, 0], atol=1e-9)
    assert res.objective == pytest.approx(120.0)


def test_zero_risk_gives_uniform_fallback():
    res = solve_allocation(AllocationProblem(np.zeros(4), np.array([True, True, False, False])))
    assert res.status == FALLBACK
    np.testing.assert_array_equal(res.p, [15.0] * 4)


def test_single_group_falls_back_with_warning():
    with pytest.warns(UserWarning):
        res = solve_allocation(AllocationProblem(np.array([1.0, 3.0]), np.array([True, True])))
    assert res.status == FALLBACK
    np.testing.assert_allclose(res.p, [15.0, 45.0])


def test_tie_break_prefers_lower_indices():
    mu = np.array([2.0, 1.0, 2.0, 1.0])
    mask = np.array([True, False, True, False])
    res = solve_allocation(AllocationProblem(mu, mask), tie_break=True)
    maj = 60 / 2.05
    np.testing.assert_allclose(res.p, [60 - maj, maj, 0, 0], atol=1e-8)
    again = solve_allocation(AllocationProblem(mu, mask), tie_break=True)
    np.testing.assert_array_equal(res.p, again.p)


def test_scale_equivariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        mu = rng.uniform(0.01, 3, 6)
        mask = np.array([True, True, True, False, False, False])
        a = solve_allocation(AllocationProblem(mu, mask))
        b = solve_allocation(AllocationProblem(7.5 * mu, mask))
        np.testing.assert_allclose(b.p, a.p, atol=1e-9)
        assert b.objective == pytest.approx(7.5 * a.objective, rel=1e-12)


def test_dir_of_cases():
    mask = np.array([True, True, False, False])
    assert dir_of([1, 1, 1, 1], mask) == (1.0, False)
    assert dir_of([3, 3, 2, 2], mask) == (1.5, False)
    d, degenerate = dir_of([1, 0, 0, 0], mask)
    assert degenerate and d == pytest.approx(0.5 / 1e-6)
    with pytest.raises(ValueError):
        dir_of([1, 2], [True, True])


def test_minority_threshold_is_inclusive():
    np.testing.assert_array_equal(minority_mask([0.5, 0.49, 0.9]), [True, False, True])


def test_proportional():
    np.testing.assert_allclose(proportional([1, 3], 60), [15, 45])
    np.testing.assert_allclose(proportional([0, 0, 0], 60), [20, 20, 20])


def test_allocate_all_rows_are_independent_and_audited():
    rng = np.random.default_rng(5)
    mask = np.array([True, False, True, False, False])
    R = rng.uniform(0, 2, (50, 5))
    R[10] = R[11] = R[12]
    series = allocate_all(R, mask)
    assert series.P.shape == (50, 5)
    np.testing.assert_array_equal(series.P[10], series.P[12])
    single = solve_allocation(AllocationProblem(R[3], mask))
    np.testing.assert_array_equal(series.P[3], single.p)
    for p in series.P:
        assert_feasible(p, mask, 60.0, 0.05)
    assert series.optimal_fraction == 1.0


def test_allocation_series_round_trip(tmp_path):
    mask = np.array([True, False, False])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        series = allocate_all(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]), mask)
    series.save(tmp_path / "alloc")
    back = AllocationSeries.load(tmp_path / "alloc")
    assert back.P.tobytes() == series.P.tobytes()
    assert back.status == [OPTIMAL, FALLBACK]
    assert back.meta["budget"] == 60.0

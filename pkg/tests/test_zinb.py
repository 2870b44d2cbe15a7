import math

import numpy as np
import pytest
import torch
from scipy import stats

from fairpatrol.predictor.zinb import NonFiniteError, link, nb_logpmf, zinb_nll, zinb_nll_torch


def torch_nll(y, mu, theta, pi):
    t = lambda v: torch.tensor(np.atleast_1d(v), dtype=torch.float64)  # noqa: E731
    logit = math.log(pi) - math.log1p(-pi)
    return float(zinb_nll_torch(t(y), t(mu), t(theta), t(logit)))


def test_zero_count_case():
    assert zinb_nll(0, 1.0, 1.0, 0.5) == pytest.approx(-math.log(0.75), abs=1e-9)
    assert zinb_nll(0, 1.0, 1.0, 0.5) == pytest.approx(0.287682, abs=1e-6)
    assert torch_nll(0, 1.0, 1.0, 0.5) == pytest.approx(-math.log(0.75), abs=1e-9)


def test_geometric_case():
    expected = -math.log((1 / 3) * (2 / 3))
    assert zinb_nll(1, 2.0, 1.0, 1e-12) == pytest.approx(expected, abs=1e-6)
    assert zinb_nll(1, 2.0, 1.0, 1e-12) == pytest.approx(1.504077, abs=1e-6)
    assert torch_nll(1, 2.0, 1.0, 1e-12) == pytest.approx(expected, abs=1e-6)


def test_certain_zero_has_no_loss():
    assert zinb_nll(0, 3.0, 2.0, 1 - 1e-12) == pytest.approx(0.0, abs=1e-10)


def test_nb_matches_scipy_for_integer_counts():
    rng = np.random.default_rng(0)
    mu = rng.uniform(0.1, 5, 50)
    theta = rng.uniform(0.2, 4, 50)
    y = rng.integers(0, 12, 50)
    ref = stats.nbinom.logpmf(y, theta, theta / (theta + mu))
    np.testing.assert_allclose(nb_logpmf(y, mu, theta), ref, rtol=1e-10, atol=1e-12)


def test_numpy_and_torch_losses_agree_on_real_counts():
    rng = np.random.default_rng(1)
    y = rng.poisson(0.6, 200) * rng.uniform(0.3, 0.9, 200)
    mu = rng.uniform(0.05, 3, 200)
    theta = rng.uniform(0.1, 3, 200)
    pi = rng.uniform(0.01, 0.99, 200)
    ref = zinb_nll(y, mu, theta, pi).mean()
    got = float(
        zinb_nll_torch(
            torch.from_numpy(y), torch.from_numpy(mu), torch.from_numpy(theta), torch.from_numpy(np.log(pi / (1 - pi)))
        )
    )
    assert got == pytest.approx(ref, rel=1e-12)


def test_nonnegative_for_integer_counts():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 20, 500)
    nll = zinb_nll(y, rng.uniform(0.01, 10, 500), rng.uniform(0.01, 10, 500), rng.uniform(0, 1, 500))
    assert np.all(nll >= -1e-12)


def test_pmf_sums_to_one():
    mu, theta, pi = 1.7, 0.8, 0.3
    y = np.arange(400)
    total = np.exp(-zinb_nll(y, mu, theta, pi)).sum()
    assert total == pytest.approx(1.0, abs=1e-12)


def test_non_finite_parameters_rejected():
    with pytest.raises(NonFiniteError):
        zinb_nll(0, np.nan, 1.0, 0.5)


def test_links_at_zero_and_far_negative():
    p = link(np.zeros(3))
    assert p.mu == pytest.approx(math.log(2)) and p.theta == pytest.approx(0.6931, abs=1e-4)
    assert p.pi == 0.5
    q = link(np.full(3, -700.0))
    assert 0 < q.mu < 1e-300 and 0 < q.pi < 1e-300

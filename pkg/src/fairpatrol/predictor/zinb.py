"""Zero-inflated negative binomial likelihood.

``zinb_nll`` is the plain numpy evaluation used for checks and reporting;
``zinb_nll_torch`` is the training loss and works from the gate logit for
stability. Both accept real-valued ``y >= 0``: the NB term uses log-gamma,
so fractional observed counts are handled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import expit, gammaln


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class ZinbParams:
    mu: np.ndarray
    theta: np.ndarray
    pi: np.ndarray


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def link(pre) -> ZinbParams:
    """Apply softplus/softplus/sigmoid to the three pre-link outputs (last axis)."""
    pre = np.asarray(pre, dtype=np.float64)
    return ZinbParams(softplus(pre[..., 0]), softplus(pre[..., 1]), expit(pre[..., 2]))


def nb_logpmf(y, mu, theta):
    y, mu, theta = (np.asarray(a, dtype=np.float64) for a in (y, mu, theta))
    log_total = np.log(theta + mu)
    return (
        gammaln(y + theta)
        - gammaln(theta)
        - gammaln(y + 1.0)
        + theta * (np.log(theta) - log_total)
        + y * (np.log(mu) - log_total)
    )


def zinb_nll(y, mu, theta, pi):
    """Pointwise negative log-likelihood; take ``.mean()`` for a batch loss."""
    y, mu, theta, pi = (np.asarray(a, dtype=np.float64) for a in (y, mu, theta, pi))
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(theta)) and np.all(np.isfinite(pi))):
        raise NonFiniteError("non-finite ZINB parameters")
    zero_nb = np.exp(theta * (np.log(theta) - np.log(theta + mu)))
    with np.errstate(divide="ignore"):
        at_zero = -np.log(pi + (1.0 - pi) * zero_nb)
        positive = -np.log1p(-pi) - nb_logpmf(y, mu, theta)
    return np.where(y > 0, positive, at_zero)


def zinb_nll_torch(y: torch.Tensor, mu: torch.Tensor, theta: torch.Tensor, pi_logit: torch.Tensor) -> torch.Tensor:
    """Mean NLL over all elements, computed in log space."""
    log_pi = -F.softplus(-pi_logit)
    log_1m_pi = -F.softplus(pi_logit)
    log_total = torch.log(theta + mu)
    log_nb_zero = theta * (torch.log(theta) - log_total)
    at_zero = -torch.logaddexp(log_pi, log_1m_pi + log_nb_zero)
    log_nb = (
        torch.lgamma(y + theta)
        - torch.lgamma(theta)
        - torch.lgamma(y + 1.0)
        + log_nb_zero
        + y * (torch.log(mu) - log_total)
    )
    positive = -log_1m_pi - log_nb
    return torch.where(y > 0, positive, at_zero).mean()

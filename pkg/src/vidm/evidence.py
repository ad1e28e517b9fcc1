"""Variational inference over a finite parameter grid.

The parameter theta takes values on a finite grid, so every integral over
theta is a sum and the exact posterior, the log evidence and the ELBO can
all be computed by enumeration. This gives a universal reference point for
the approximate machinery elsewhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core_prob import categorical, kl_divergence, log_sum_exp, make_rng
from .errors import EmptyBatch, InvalidDistribution, ZeroEvidence

__all__ = [
    "DiscreteGenerativeModel",
    "Posterior",
    "ElboTerms",
    "exact_posterior",
    "elbo",
    "evidence_gap",
    "posterior_predictive",
    "minibatch_elbo_estimate",
]


@dataclass(frozen=True)
class DiscreteGenerativeModel:
    """Prior over a theta-grid plus per-datum log-likelihoods.

    Attributes:
        prior: categorical over the G grid points.
        log_lik: array of shape (N, G); entry [n, g] is
            ln p(y_n | theta_g, X_n). ``-inf`` encodes a hard zero.
        theta_grid: optional grid values, kept for reporting only.
    """

    prior: np.ndarray
    log_lik: np.ndarray
    theta_grid: np.ndarray | None = None

    def __post_init__(self):
        prior = categorical(self.prior)
        log_lik = np.array(self.log_lik, dtype=float)
        if log_lik.ndim == 1:
            log_lik = log_lik[None, :]
        if log_lik.ndim != 2 or log_lik.shape[1] != prior.shape[0]:
            raise InvalidDistribution(
                f"log_lik must have shape (N, {prior.shape[0]}), got {log_lik.shape}"
            )
        if np.any(np.isnan(log_lik)) or np.any(log_lik == np.inf):
            raise ValueError("log-likelihood entries must be finite or -inf")
        log_lik.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "log_lik", log_lik)

    @property
    def n_data(self) -> int:
        return self.log_lik.shape[0]

    @property
    def n_grid(self) -> int:
        return self.prior.shape[0]


class Posterior(NamedTuple):
    q: np.ndarray
    log_evidence: float


class ElboTerms(NamedTuple):
    elbo: float
    exp_loglik: float
    kl: float
    beta: float


def _log_prior(prior):
    with np.errstate(divide="ignore"):
        return np.log(prior)


def _expected(q, values):
    """sum_g q[g] * values[..., g] with 0 * (-inf) taken as 0."""
    q = np.asarray(q, dtype=float)
    pos = q > 0
    return np.sum(q[pos] * values[..., pos], axis=-1)


def exact_posterior(m: DiscreteGenerativeModel) -> Posterior:
    """Bayes posterior on the grid and the log evidence ln p(y | X)."""
    log_joint = _log_prior(m.prior) + m.log_lik.sum(axis=0)
    if not np.any(np.isfinite(log_joint)):
        raise ZeroEvidence("all joint weights are zero")
    log_ev = log_sum_exp(log_joint)
    q = np.exp(log_joint - log_ev)
    q /= q.sum()
    return Posterior(q, log_ev)


def elbo(m: DiscreteGenerativeModel, q, beta: float = 1.0) -> ElboTerms:
    """sum_n E_q[ln p(y_n | theta)] - beta * KL(q || prior).

    With ``beta = 0`` the KL term is skipped entirely, so q may leave the
    prior's support.
    """
    q = categorical(q)
    if q.shape != m.prior.shape:
        raise InvalidDistribution("q and prior live on different grids")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    exp_ll = float(_expected(q, m.log_lik.sum(axis=0)))
    kl = kl_divergence(q, m.prior) if beta > 0 else 0.0
    return ElboTerms(exp_ll - beta * kl, exp_ll, kl, float(beta))


def evidence_gap(m: DiscreteGenerativeModel, q) -> float:
    """ln p(y | X) - ELBO(q), which equals KL(q || exact posterior)."""
    return exact_posterior(m).log_evidence - elbo(m, q, 1.0).elbo


def posterior_predictive(m: DiscreteGenerativeModel, q, new_log_lik) -> float:
    """Joint predictive probability of a batch of new outcomes.

    ``new_log_lik`` has shape (M, G). The product over the M test points is
    taken inside the sum over theta, so the outcomes stay coupled through
    the shared parameter.
    """
    q = categorical(q)
    new_log_lik = np.atleast_2d(np.asarray(new_log_lik, dtype=float))
    if new_log_lik.shape[1] != m.n_grid:
        raise InvalidDistribution("new_log_lik must cover the theta-grid")
    with np.errstate(divide="ignore"):
        log_terms = np.log(q) + new_log_lik.sum(axis=0)
    if not np.any(np.isfinite(log_terms)):
        return 0.0
    return float(np.exp(log_sum_exp(log_terms)))


def minibatch_elbo_estimate(m: DiscreteGenerativeModel, q, batch, seed=None) -> float:
    """Rescaled minibatch estimate of ``elbo(m, q, 1)``.

    ``batch`` is either a sequence of data indices or an int batch size; in
    the latter case the indices are drawn uniformly without replacement
    from the stream given by ``seed``.
    """
    q = categorical(q)
    if isinstance(batch, (int, np.integer)):
        if batch <= 0:
            raise EmptyBatch("batch size must be positive")
        if seed is None:
            raise ValueError("a seed is required to draw a random batch")
        idx = make_rng(seed, "minibatch").choice(m.n_data, size=int(batch), replace=False)
    else:
        idx = np.asarray(list(batch) if not isinstance(batch, np.ndarray) else batch, dtype=int)
        if idx.size == 0:
            raise EmptyBatch("batch is empty")
    per_datum = _expected(q, m.log_lik[idx])
    scale = m.n_data / idx.size
    return float(scale * per_datum.sum() - kl_divergence(q, m.prior))


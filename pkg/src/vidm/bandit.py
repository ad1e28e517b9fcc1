"""Contextual bandits as inference.

A bandit problem is a state distribution p(s) and a known reward table
R(s, a). The variational objective for a policy pi(a|s) and an action prior
pi0(a) is

    J(pi0, pi) = sum_s p(s) sum_a pi(a|s) R(s,a)
                 - beta * sum_s p(s) KL(pi(.|s) || pi0).

For fixed pi0 the maximizer is the Gibbs policy pi0(a) exp(R(s,a)/beta),
normalized per state. Optimizing pi0 as well turns the problem into rate
distortion, solved here by Blahut-Arimoto alternation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_prob import categorical, conditional_table, kl_rows, log_sum_exp, normalize_log
from .errors import InvalidSpec, NotConverged

__all__ = [
    "BanditProblem",
    "SoftBanditSolution",
    "bandit_elbo",
    "soft_policy",
    "greedy_policy",
    "bandit_log_partition",
    "bandit_log_evidence",
    "bandit_exact_elbo",
    "blahut_arimoto",
]


@dataclass(frozen=True)
class BanditProblem:
    state_dist: np.ndarray
    reward: np.ndarray

    def __post_init__(self):
        p_s = categorical(self.state_dist)
        reward = np.array(self.reward, dtype=float)
        if reward.ndim != 2 or reward.shape[0] != p_s.shape[0]:
            raise InvalidSpec(f"reward must have shape ({p_s.shape[0]}, A), got {reward.shape}")
        if not np.all(np.isfinite(reward)):
            raise InvalidSpec("reward table must be finite")
        reward.setflags(write=False)
        object.__setattr__(self, "state_dist", p_s)
        object.__setattr__(self, "reward", reward)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]


@dataclass
class SoftBanditSolution:
    policy: np.ndarray
    prior: np.ndarray
    objective: float
    reward_term: float
    kl_term: float
    beta: float
    iterations: int = 0
    trace: list = None


def bandit_elbo(p: BanditProblem, pi0, pi, beta: float) -> SoftBanditSolution:
    """Score a (prior, policy) pair; the normalizing constant is dropped."""
    pi0 = categorical(pi0)
    pi = conditional_table(pi, (p.n_states, p.n_actions))
    if beta < 0:
        raise ValueError("beta must be non-negative")
    reward_term = float(p.state_dist @ np.sum(pi * p.reward, axis=1))
    kl_term = float(p.state_dist @ kl_rows(pi, pi0)) if beta > 0 else 0.0
    return SoftBanditSolution(pi, pi0, reward_term - beta * kl_term, reward_term, kl_term, float(beta))


def greedy_policy(values, pi0) -> np.ndarray:
    """Deterministic argmax over the support of pi0, ties to the lowest index."""
    values = np.asarray(values, dtype=float)
    masked = np.where(np.asarray(pi0) > 0, values, -np.inf)
    best = np.argmax(masked, axis=-1)
    out = np.zeros(values.shape)
    np.put_along_axis(out, best[..., None], 1.0, axis=-1)
    return out


def soft_policy(p: BanditProblem, pi0, beta: float) -> np.ndarray:
    """Rowwise Gibbs policy pi(a|s) proportional to pi0(a) exp(R(s,a)/beta).

    ``beta = 0`` returns the greedy policy on the support of pi0.
    """
    pi0 = categorical(pi0)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if beta == 0:
        return greedy_policy(p.reward, pi0)
    with np.errstate(divide="ignore"):
        log_w = np.log(pi0)[None, :] + p.reward / beta
    return normalize_log(log_w, axis=1)


def bandit_log_partition(p: BanditProblem) -> float:
    """ln sum_{s,a} exp(R(s,a)): the constant dropped from the objective."""
    return log_sum_exp(p.reward)


def bandit_log_evidence(p: BanditProblem, pi0) -> float:
    """ln p(o=1) with p(o=1|s,a) = exp(R(s,a)) / sum exp(R), by enumeration."""
    pi0 = categorical(pi0)
    with np.errstate(divide="ignore"):
        log_joint = np.log(p.state_dist)[:, None] + np.log(pi0)[None, :] + p.reward
    return log_sum_exp(log_joint) - bandit_log_partition(p)


def bandit_exact_elbo(p: BanditProblem, pi0, pi) -> float:
    """The un-dropped ELBO at beta = 1: normalized likelihood included."""
    return bandit_elbo(p, pi0, pi, 1.0).objective - bandit_log_partition(p)


def blahut_arimoto(p: BanditProblem, beta: float, tol: float = 1e-10, max_iters: int = 10000,
                   strict: bool = True) -> SoftBanditSolution:
    """Jointly optimize policy and action prior by alternating maximization.

    Each iteration sets pi to the soft policy for the current prior, then
    replaces the prior by the action marginal sum_s p(s) pi(.|s), which is
    the exact maximizer for fixed pi. Both half-steps can only raise the
    objective, so the recorded trace of (objective, reward_term, kl_term)
    tuples is non-decreasing in its first entry. Iteration stops
    once a full step improves the objective by less than ``tol``.

    Raises ``NotConverged`` (carrying the best solution) after
    ``max_iters`` unless ``strict`` is False.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if beta <= 0:
        raise ValueError("beta must be positive for Blahut-Arimoto")
    pi0 = np.full(p.n_actions, 1.0 / p.n_actions)
    trace = []
    prev = -np.inf
    for it in range(1, max_iters + 1):
        pi = soft_policy(p, pi0, beta)
        half = bandit_elbo(p, pi0, pi, beta).objective
        pi0 = p.state_dist @ pi
        pi0 = pi0 / pi0.sum()
        if np.any(pi0 == 0):
            # an unused action's prior mass underflowed; drop it from pi as well
            pi = np.where(pi0 > 0, pi, 0.0)
            pi = pi / pi.sum(axis=1, keepdims=True)
        sol = bandit_elbo(p, pi0, pi, beta)
        # monotone up to rounding in the objective's own magnitude
        slack = 1e-12 * max(1.0, abs(sol.objective))
        assert half >= prev - slack and sol.objective >= half - slack, "objective decreased"
        trace.append((sol.objective, sol.reward_term, sol.kl_term))
        if sol.objective - prev < tol:
            sol.iterations, sol.trace = it, trace
            return sol
        prev = sol.objective
    sol.iterations, sol.trace = max_iters, trace
    if strict:
        raise NotConverged(f"Blahut-Arimoto did not converge in {max_iters} iterations", best=sol)
    return sol

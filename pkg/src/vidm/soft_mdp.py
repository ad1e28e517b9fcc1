"""Finite-horizon, KL-regularized control.

A finite MDP has decisions at t = 0..T. For a time-indexed policy pi_t(a|s)
and an action prior pi0(a) the objective is

    sum_t sum_s p_t(s) [ sum_a pi_t(a|s) R(s,a) - beta KL(pi_t(.|s) || pi0) ]

where p_t is the state marginal the policy induces. Soft backward
induction maximizes it exactly over time-indexed policies:

    V_{T+1} = 0
    Q_t(s,a) = R(s,a) + sum_s' P(s'|s,a) V_{t+1}(s')
    V_t(s)   = beta ln sum_a pi0(a) exp(Q_t(s,a) / beta)
    pi_t(a|s) proportional to pi0(a) exp(Q_t(s,a) / beta)

A stationary policy (S, A) is accepted anywhere a time-indexed one is and
is broadcast over all steps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .bandit import greedy_policy
from .core_prob import categorical, conditional_table, kl_rows, log_sum_exp, normalize_log, uniform
from .errors import InvalidSpec, TooLarge

__all__ = [
    "FiniteMdp",
    "SoftMdpSolution",
    "as_time_indexed",
    "state_marginals",
    "mdp_elbo",
    "soft_backward_induction",
    "entropy_regularized_solve",
    "brute_force_policy_search",
    "simplex_grid",
    "trajectory_log_partition",
    "trajectory_log_evidence",
    "trajectory_normalized_elbo",
    "ENUM_GUARD",
]

ENUM_GUARD = 10**7


@dataclass(frozen=True)
class FiniteMdp:
    init: np.ndarray
    trans: np.ndarray
    reward: np.ndarray
    horizon: int

    def __post_init__(self):
        init = categorical(self.init)
        n_s = init.shape[0]
        trans = np.asarray(self.trans, dtype=float)
        if trans.ndim != 3 or trans.shape[0] != n_s or trans.shape[2] != n_s:
            raise InvalidSpec(f"trans must have shape ({n_s}, A, {n_s}), got {trans.shape}")
        trans = conditional_table(trans)
        reward = np.array(self.reward, dtype=float)
        if reward.shape != trans.shape[:2]:
            raise InvalidSpec(f"reward must have shape {trans.shape[:2]}, got {reward.shape}")
        if not np.all(np.isfinite(reward)):
            raise InvalidSpec("reward table must be finite")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise InvalidSpec("horizon must be a non-negative integer")
        reward.setflags(write=False)
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_states(self) -> int:
        return self.trans.shape[0]

    @property
    def n_actions(self) -> int:
        return self.trans.shape[1]

    def with_horizon(self, horizon: int) -> "FiniteMdp":
        return FiniteMdp(self.init, self.trans, self.reward, horizon)


@dataclass
class SoftMdpSolution:
    policy: np.ndarray  # (T+1, S, A)
    values: np.ndarray | None  # (T+1, S), None for scored-only policies
    objective: float
    reward_term: float
    kl_term: float
    beta: float

    @property
    def stationarity_gap(self) -> float:
        """Largest entrywise change of the policy across time steps."""
        return float(np.max(np.ptp(self.policy, axis=0))) if len(self.policy) else 0.0

    def is_stationary(self, atol: float = 1e-9) -> bool:
        return self.stationarity_gap <= atol


def as_time_indexed(m: FiniteMdp, pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim == 2:
        pi = np.broadcast_to(pi, (m.horizon + 1,) + pi.shape)
    return conditional_table(pi, (m.horizon + 1, m.n_states, m.n_actions))


def state_marginals(m: FiniteMdp, pi) -> np.ndarray:
    """State occupancy p_t(s) for t = 0..T, shape (T+1, S)."""
    pi = as_time_indexed(m, pi)
    out = np.empty((m.horizon + 1, m.n_states))
    out[0] = m.init
    for t in range(m.horizon):
        nxt = np.einsum("s,sa,sab->b", out[t], pi[t], m.trans)
        out[t + 1] = nxt / nxt.sum()
    return out


def mdp_elbo(m: FiniteMdp, pi0, pi, beta: float) -> SoftMdpSolution:
    """Expected cumulative reward minus beta times the expected policy KL."""
    pi0 = categorical(pi0)
    pi = as_time_indexed(m, pi)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    marg = state_marginals(m, pi)
    reward_term = float(np.sum(marg * np.sum(pi * m.reward[None], axis=2)))
    kl_term = float(np.sum(marg * kl_rows(pi, pi0))) if beta > 0 else 0.0
    return SoftMdpSolution(pi, None, reward_term - beta * kl_term, reward_term, kl_term, float(beta))


def soft_backward_induction(m: FiniteMdp, pi0, beta: float) -> SoftMdpSolution:
    """Exact maximizer of ``mdp_elbo`` over time-indexed policies.

    ``beta = 0`` runs ordinary backward induction with greedy policies
    restricted to the support of pi0 (ties go to the lowest action index).
    """
    pi0 = categorical(pi0)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    T, S, A = m.horizon, m.n_states, m.n_actions
    values = np.zeros((T + 2, S))
    policy = np.empty((T + 1, S, A))
    with np.errstate(divide="ignore"):
        log_pi0 = np.log(pi0)
    for t in range(T, -1, -1):
        q = m.reward + m.trans @ values[t + 1]
        if beta == 0:
            policy[t] = greedy_policy(q, pi0)
            values[t] = np.sum(policy[t] * q, axis=1)
        else:
            log_w = log_pi0[None, :] + q / beta
            values[t] = beta * log_sum_exp(log_w, axis=1)
            policy[t] = normalize_log(log_w, axis=1)
    sol = mdp_elbo(m, pi0, policy, beta)
    sol.values = values[: T + 1]
    sol.objective = float(m.init @ values[0])
    return sol


def entropy_regularized_solve(m: FiniteMdp, beta: float) -> SoftMdpSolution:
    """Soft backward induction under a uniform action prior."""
    return soft_backward_induction(m, uniform(m.n_actions), beta)


def simplex_grid(n: int, resolution: float) -> np.ndarray:
    """All points of the n-simplex whose coordinates are multiples of ``resolution``."""
    k = int(round(1.0 / resolution))
    if not np.isclose(k * resolution, 1.0):
        raise ValueError("resolution must divide 1")
    pts = [c for c in itertools.product(range(k + 1), repeat=n - 1) if sum(c) <= k]
    pts = np.array([list(c) + [k - sum(c)] for c in pts], dtype=float) / k
    return pts


def _deterministic_policies(m: FiniteMdp, pi0):
    support = np.flatnonzero(np.asarray(pi0) > 0)
    rows = (m.horizon + 1) * m.n_states
    eye = np.eye(m.n_actions)
    for choice in itertools.product(support, repeat=rows):
        yield eye[list(choice)].reshape(m.horizon + 1, m.n_states, m.n_actions)


def brute_force_policy_search(m: FiniteMdp, pi0, beta: float, grid_resolution: float = 0.01,
                              exhaustive: bool = False, guard: int = ENUM_GUARD) -> SoftMdpSolution:
    """Best time-indexed policy found by direct search.

    Every deterministic policy (restricted to the support of pi0) is scored
    exactly with ``mdp_elbo``. When ``beta > 0`` the search also covers
    policies whose rows lie on a simplex grid of spacing
    ``grid_resolution``:

    * ``exhaustive=True`` scores every element of the product grid, which
      is only feasible for very small problems;
    * otherwise the grid is searched row by row from the last step back,
      choosing for each (t, s) the grid row with the best score given the
      rows already fixed for later steps. The objective is additive over
      steps with non-negative occupancy weights, so this finds the same
      optimum as the product search.

    Grid candidates are scored by explicit enumeration, without the
    closed-form log-sum-exp backup, and the winner is re-scored with
    ``mdp_elbo``. Deterministic-policy ties are broken lexicographically.
    Raises ``TooLarge`` if the number of candidates exceeds ``guard``.
    """
    pi0 = categorical(pi0)
    T, S, A = m.horizon, m.n_states, m.n_actions
    n_det = int(np.sum(pi0 > 0)) ** ((T + 1) * S)
    grid = simplex_grid(A, grid_resolution) if beta > 0 else np.empty((0, A))
    if beta > 0:
        grid = grid[np.all((grid == 0) | (pi0[None, :] > 0), axis=1)]
    n_grid = len(grid) ** ((T + 1) * S) if exhaustive else len(grid) * (T + 1) * S
    if n_det + n_grid > guard:
        raise TooLarge(f"{n_det + n_grid} candidate policies exceed the guard of {guard}")

    best = None
    for pol in _deterministic_policies(m, pi0):
        sol = mdp_elbo(m, pi0, pol, beta)
        if best is None or sol.objective > best.objective:
            best = sol
    if beta == 0:
        return best

    grid_kl = kl_rows(grid, pi0)
    if exhaustive:
        rows = (T + 1) * S
        for choice in itertools.product(range(len(grid)), repeat=rows):
            pol = grid[list(choice)].reshape(T + 1, S, A)
            sol = mdp_elbo(m, pi0, pol, beta)
            if sol.objective > best.objective:
                best = sol
        return best

    policy = np.empty((T + 1, S, A))
    cont = np.zeros(S)
    for t in range(T, -1, -1):
        for s in range(S):
            scores = grid @ (m.reward[s] + m.trans[s] @ cont) - beta * grid_kl
            policy[t, s] = grid[int(np.argmax(scores))]
        q = m.reward + m.trans @ cont
        cont = np.sum(policy[t] * q, axis=1) - beta * kl_rows(policy[t], pi0)
    sol = mdp_elbo(m, pi0, policy, beta)
    return sol if sol.objective > best.objective else best


def _trajectories(m: FiniteMdp, guard: int):
    T, S, A = m.horizon, m.n_states, m.n_actions
    n = (S * A) ** (T + 1)
    if n > guard:
        raise TooLarge(f"{n} trajectories exceed the guard of {guard}")
    return itertools.product(itertools.product(range(S), range(A)), repeat=T + 1)


def _trajectory_table(m: FiniteMdp, guard: int):
    """Per trajectory: summed reward, and the log-weight of the state path."""
    rets, log_dyn, paths = [], [], []
    with np.errstate(divide="ignore"):
        log_init, log_trans = np.log(m.init), np.log(m.trans)
    for path in _trajectories(m, guard):
        rets.append(sum(m.reward[s, a] for s, a in path))
        lp = log_init[path[0][0]]
        for (s, a), (s2, _) in zip(path[:-1], path[1:]):
            lp += log_trans[s, a, s2]
        log_dyn.append(lp)
        paths.append(path)
    return np.array(rets), np.array(log_dyn), paths


def trajectory_log_partition(m: FiniteMdp, guard: int = 10**6) -> float:
    """ln of the sum of exp(total reward) over all state-action trajectories."""
    rets, _, _ = _trajectory_table(m, guard)
    return log_sum_exp(rets)


def trajectory_log_evidence(m: FiniteMdp, pi0, guard: int = 10**6) -> float:
    """ln p(o=1) under the prior trajectory law, by full enumeration."""
    pi0 = categorical(pi0)
    rets, log_dyn, paths = _trajectory_table(m, guard)
    with np.errstate(divide="ignore"):
        log_pi0 = np.log(pi0)
    log_prior = log_dyn + np.array([sum(log_pi0[a] for _, a in p) for p in paths])
    return log_sum_exp(log_prior + rets) - log_sum_exp(rets)


def trajectory_normalized_elbo(m: FiniteMdp, pi0, pi) -> float:
    """ELBO with the normalized likelihood (beta = 1)."""
    return mdp_elbo(m, pi0, pi, 1.0).objective - trajectory_log_partition(m)

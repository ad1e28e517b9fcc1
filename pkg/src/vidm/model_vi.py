"""Variational learning of a tabular transition model.

Each (s, a) row of the unknown transition table theta gets an independent
Dirichlet posterior. The family is conjugate to the categorical likelihood
of observed (s, a, s') tuples, so the ELBO optimum is the concentration
update alpha = gamma + counts and the ELBO there equals the exact log
evidence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import digamma, gammaln

from .core_prob import draw_rows, make_rng
from .errors import EmptyBatch, InvalidSpec, ShapeMismatch, TooLarge

__all__ = [
    "TransitionDataset",
    "ElboReport",
    "dirichlet_expected_log",
    "dirichlet_kl",
    "log_multivariate_beta",
    "model_elbo",
    "fit_variational",
    "stochastic_elbo",
    "predict_states",
    "sample_dirichlet_rows",
    "sequence_log_prob",
    "unroll",
]


@dataclass(frozen=True)
class TransitionDataset:
    """Multiset of (s, a, s') transition triples."""

    tuples: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        tup = np.asarray(self.tuples, dtype=np.int64).reshape(-1, 3)
        if tup.size and (
            tup.min() < 0
            or tup[:, [0, 2]].max() >= self.n_states
            or tup[:, 1].max() >= self.n_actions
        ):
            raise InvalidSpec("transition indices out of range")
        tup.setflags(write=False)
        object.__setattr__(self, "tuples", tup)

    def __len__(self):
        return self.tuples.shape[0]

    def counts(self, idx=None) -> np.ndarray:
        """Count table n[s, a, s'] (optionally over a subset of tuples)."""
        tup = self.tuples if idx is None else self.tuples[np.asarray(idx, dtype=int)]
        out = np.zeros((self.n_states, self.n_actions, self.n_states))
        np.add.at(out, (tup[:, 0], tup[:, 1], tup[:, 2]), 1.0)
        return out

    def concat(self, other: "TransitionDataset") -> "TransitionDataset":
        if (self.n_states, self.n_actions) != (other.n_states, other.n_actions):
            raise ShapeMismatch("datasets have different state/action counts")
        return TransitionDataset(np.concatenate([self.tuples, other.tuples]), self.n_states, self.n_actions)


class ElboReport(NamedTuple):
    elbo: float
    exp_loglik: float
    kl: float
    iteration: int = 0


def dirichlet_expected_log(conc) -> np.ndarray:
    """E[ln theta_k] under Dir(conc), rowwise over the last axis."""
    conc = np.asarray(conc, dtype=float)
    return digamma(conc) - digamma(conc.sum(axis=-1, keepdims=True))


def log_multivariate_beta(conc) -> np.ndarray:
    conc = np.asarray(conc, dtype=float)
    return gammaln(conc).sum(axis=-1) - gammaln(conc.sum(axis=-1))


def dirichlet_kl(q_conc, p_conc) -> np.ndarray:
    """KL(Dir(q_conc) || Dir(p_conc)) rowwise over the last axis."""
    q_conc = np.asarray(q_conc, dtype=float)
    p_conc = np.asarray(p_conc, dtype=float)
    return (
        log_multivariate_beta(p_conc)
        - log_multivariate_beta(q_conc)
        + np.sum((q_conc - p_conc) * dirichlet_expected_log(q_conc), axis=-1)
    )


def _check_conc(conc, shape, name):
    conc = np.asarray(conc, dtype=float)
    if conc.shape != shape:
        raise ShapeMismatch(f"{name} has shape {conc.shape}, expected {shape}")
    if not np.all(conc > 0) or not np.all(np.isfinite(conc)):
        raise InvalidSpec(f"{name} concentrations must be positive and finite")
    return conc


def _shape(data: TransitionDataset):
    return (data.n_states, data.n_actions, data.n_states)


def model_elbo(data: TransitionDataset, prior, q) -> ElboReport:
    """sum over tuples of E_q[ln theta_{s,a,s'}] - sum_{s,a} KL(q_sa || prior_sa)."""
    prior = _check_conc(prior, _shape(data), "prior")
    q = _check_conc(q, _shape(data), "q")
    exp_ll = float(np.sum(data.counts() * dirichlet_expected_log(q)))
    kl = float(np.sum(dirichlet_kl(q, prior)))
    return ElboReport(exp_ll - kl, exp_ll, kl)


def fit_variational(data: TransitionDataset, prior) -> tuple[np.ndarray, ElboReport]:
    """Conjugate update: returns (gamma + counts, ELBO report at the optimum)."""
    prior = _check_conc(prior, _shape(data), "prior")
    q = prior + data.counts()
    return q, model_elbo(data, prior, q)


def stochastic_elbo(data: TransitionDataset, prior, q, batch, seed=None) -> float:
    """Minibatch estimate of ``model_elbo``, rescaled by len(data)/len(batch).

    ``batch`` is an index sequence into the tuples, or an int size drawn
    uniformly without replacement from the ``seed`` stream.
    """
    prior = _check_conc(prior, _shape(data), "prior")
    q = _check_conc(q, _shape(data), "q")
    if isinstance(batch, (int, np.integer)):
        if batch <= 0:
            raise EmptyBatch("batch size must be positive")
        if seed is None:
            raise ValueError("a seed is required to draw a random batch")
        idx = make_rng(seed, "stochastic_elbo").choice(len(data), size=int(batch), replace=False)
    else:
        idx = np.asarray(batch, dtype=int).reshape(-1)
        if idx.size == 0:
            raise EmptyBatch("batch is empty")
    elog = dirichlet_expected_log(q)
    tup = data.tuples[idx]
    exp_ll = elog[tup[:, 0], tup[:, 1], tup[:, 2]].sum() * (len(data) / idx.size)
    return float(exp_ll - np.sum(dirichlet_kl(q, prior)))


def sample_dirichlet_rows(conc, rng: np.random.Generator) -> np.ndarray:
    """One Dirichlet draw per row of ``conc`` (last axis is the outcome)."""
    conc = np.asarray(conc, dtype=float)
    g = rng.standard_gamma(conc)
    s = g.sum(axis=-1, keepdims=True)
    # very small concentrations can underflow every gamma draw in a row
    bad = s[..., 0] <= 0
    if np.any(bad):
        g[bad] = np.eye(conc.shape[-1])[np.argmax(conc[bad], axis=-1)]
        s = g.sum(axis=-1, keepdims=True)
    return g / s


def sequence_log_prob(conc, s0, actions, states) -> float:
    """ln p(s_1..s_T | s_0, a_0..a_{T-1}) with theta integrated out.

    Rows visited more than once share their parameter, so the factors are
    Polya-urn predictive probabilities with counts updated along the path.
    """
    conc = np.asarray(conc, dtype=float)
    seen = {}
    lp = 0.0
    prev = int(s0)
    for a, s in zip(actions, states):
        row = (prev, int(a))
        c = seen.setdefault(row, np.zeros(conc.shape[-1]))
        alpha = conc[row]
        lp += np.log(alpha[s] + c[s]) - np.log(alpha.sum() + c.sum())
        c[s] += 1
        prev = int(s)
    return float(lp)


def _check_rollout(conc, s0, actions):
    n_s, n_a = conc.shape[0], conc.shape[1]
    actions = [int(a) for a in actions]
    if not actions:
        raise ValueError("action sequence must be non-empty")
    if not 0 <= int(s0) < n_s or any(not 0 <= a < n_a for a in actions):
        raise InvalidSpec("state or action index out of range")
    return actions


def predict_states(q, s0, actions, n_samples: int | None = None, seed=None,
                   exact: bool = False, guard: int = 10**6):
    """Predict a future state sequence from the transition posterior.

    Sample mode (``exact=False``) returns an int array of shape
    (n_samples, T*): for each sequence one theta is drawn from q and then
    held fixed while the chain is unrolled from ``s0``.

    Exact mode returns the joint probability table of shape (S,) * T*,
    with theta marginalized analytically.
    """
    q = np.asarray(q, dtype=float)
    actions = _check_rollout(q, s0, actions)
    n_s = q.shape[0]
    horizon = len(actions)
    if exact:
        if n_s**horizon > guard:
            raise TooLarge(f"{n_s}^{horizon} state sequences exceed the guard of {guard}")
        joint = np.empty((n_s,) * horizon)
        for seq in itertools.product(range(n_s), repeat=horizon):
            joint[seq] = np.exp(sequence_log_prob(q, s0, actions, seq))
        return joint

    if n_samples is None or seed is None:
        raise ValueError("sample mode needs n_samples and seed")
    rng = make_rng(seed, "predict_states")
    theta = sample_dirichlet_rows(np.broadcast_to(q, (n_samples,) + q.shape), rng)
    return unroll(theta, s0, actions, rng)


def unroll(theta, s0, actions, rng: np.random.Generator) -> np.ndarray:
    """Roll out one chain per leading index of ``theta`` (shape (n, S, A, S))."""
    n = theta.shape[0]
    rows = np.arange(n)
    s = np.full(n, int(s0))
    out = np.empty((n, len(actions)), dtype=np.int64)
    for t, a in enumerate(actions):
        s = draw_rows(theta[rows, s, a], rng)
        out[:, t] = s
    return out


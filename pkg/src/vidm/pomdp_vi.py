"""Mean-field variational learning of a discrete POMDP model.

Latent states s_1..s_T evolve under an unknown transition table theta_s
and emit observations o_1..o_T through an unknown observation table
theta_o. The variational posterior factorizes fully:

    q(theta_s) q(theta_o) prod_t q(s_t)

with Dirichlet rows for both tables and a categorical belief per time
step. The initial state s_0 is given, so q(s_0) is a point mass. Every
factor has a closed-form coordinate update, and coordinate ascent never
lowers the ELBO.

Several episodes can share one pair of parameter posteriors; each episode
keeps its own state beliefs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core_prob import draw_rows, entropy, make_rng
from .errors import InvalidSpec, NotConverged, ShapeMismatch, TooLarge, ZeroLikelihoodPrefix
from .model_vi import dirichlet_expected_log, dirichlet_kl, sample_dirichlet_rows

__all__ = [
    "PomdpEpisode",
    "MeanFieldState",
    "PomdpElboReport",
    "PomdpFit",
    "init_mean_field",
    "pomdp_elbo",
    "cavi_sweep",
    "fit_pomdp",
    "predict_observations",
    "forward_filter",
    "filter_beliefs",
    "DEFAULT_RESTARTS",
]

DEFAULT_RESTARTS = 8


@dataclass(frozen=True)
class PomdpEpisode:
    """One action-conditioned episode.

    ``actions[t]`` is a_t for t = 0..T-1 and ``observations[t]`` is
    o_{t+1}; there is no observation of s_0.
    """

    s0: int
    actions: tuple
    observations: tuple
    n_states: int
    n_actions: int
    n_obs: int

    def __post_init__(self):
        acts = tuple(int(a) for a in self.actions)
        obs = tuple(int(o) for o in self.observations)
        if len(acts) != len(obs):
            raise ShapeMismatch("actions and observations must have the same length")
        if not 0 <= int(self.s0) < self.n_states:
            raise InvalidSpec("s0 out of range")
        if any(not 0 <= a < self.n_actions for a in acts) or any(not 0 <= o < self.n_obs for o in obs):
            raise InvalidSpec("action or observation index out of range")
        object.__setattr__(self, "s0", int(self.s0))
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "observations", obs)

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass
class MeanFieldState:
    q_trans: np.ndarray  # (S, A, S) Dirichlet concentrations
    q_obs: np.ndarray  # (S, O)
    q_states: list  # per episode, (T, S) beliefs for t = 1..T
    prior_trans: np.ndarray
    prior_obs: np.ndarray

    def copy(self) -> "MeanFieldState":
        return MeanFieldState(
            self.q_trans.copy(),
            self.q_obs.copy(),
            [b.copy() for b in self.q_states],
            self.prior_trans,
            self.prior_obs,
        )

    def mean_trans(self) -> np.ndarray:
        return self.q_trans / self.q_trans.sum(axis=-1, keepdims=True)

    def mean_obs(self) -> np.ndarray:
        return self.q_obs / self.q_obs.sum(axis=-1, keepdims=True)


class PomdpElboReport(NamedTuple):
    elbo: float
    obs_loglik: float  # expected log-likelihood of the observations
    state_term: float  # minus the expected KL of the state beliefs
    kl_trans: float
    kl_obs: float
    iteration: int = 0


@dataclass
class PomdpFit:
    state: MeanFieldState
    report: PomdpElboReport
    restart: int
    sweeps: int
    elbo_trace: list = field(default_factory=list)
    update_trace: list = field(default_factory=list)
    restart_elbos: list = field(default_factory=list)
    report_trace: list = field(default_factory=list)  # per sweep, starting at the initialization


def _episodes(ep) -> list[PomdpEpisode]:
    return [ep] if isinstance(ep, PomdpEpisode) else list(ep)


def _check(episodes: Sequence[PomdpEpisode], mf: MeanFieldState):
    S, A, O = mf.q_obs.shape[0], mf.q_trans.shape[1], mf.q_obs.shape[1]
    if mf.q_trans.shape != (S, A, S) or mf.prior_trans.shape != mf.q_trans.shape:
        raise ShapeMismatch("transition concentrations have inconsistent shapes")
    if mf.prior_obs.shape != mf.q_obs.shape:
        raise ShapeMismatch("observation concentrations have inconsistent shapes")
    if len(mf.q_states) != len(episodes):
        raise ShapeMismatch("one belief table per episode is required")
    for ep, b in zip(episodes, mf.q_states):
        if (ep.n_states, ep.n_actions, ep.n_obs) != (S, A, O):
            raise ShapeMismatch("episode dimensions disagree with the model")
        if b.shape != (ep.horizon, S):
            raise ShapeMismatch(f"beliefs have shape {b.shape}, expected {(ep.horizon, S)}")


def _with_s0(ep: PomdpEpisode, beliefs: np.ndarray) -> np.ndarray:
    """Beliefs for t = 0..T with the point mass on s_0 prepended."""
    dirac = np.zeros((1, ep.n_states))
    dirac[0, ep.s0] = 1.0
    return np.concatenate([dirac, beliefs])


def _state_terms(episodes, beliefs, e_obs, e_trans):
    """Observation log-likelihood and state term for given parameter expectations."""
    obs_ll = 0.0
    state_term = 0.0
    for ep, b in zip(episodes, beliefs):
        if ep.horizon == 0:
            continue
        full = _with_s0(ep, b)
        obs_ll += float(np.sum(b * e_obs[:, ep.observations].T))
        # sum_t q_{t-1}^T E[ln theta_s(., a_{t-1}, .)] q_t
        cross = np.einsum("tj,jtk,tk->", full[:-1], e_trans[:, ep.actions, :], b)
        state_term += float(cross + entropy(b).sum())
    return obs_ll, state_term


class _Expectations:
    """Digamma expectations and prior KLs of the two parameter factors."""

    def __init__(self, mf: MeanFieldState):
        self.set_trans(mf)
        self.set_obs(mf)

    def set_trans(self, mf):
        self.e_trans = dirichlet_expected_log(mf.q_trans)
        self.kl_trans = float(np.sum(dirichlet_kl(mf.q_trans, mf.prior_trans)))

    def set_obs(self, mf):
        self.e_obs = dirichlet_expected_log(mf.q_obs)
        self.kl_obs = float(np.sum(dirichlet_kl(mf.q_obs, mf.prior_obs)))

    def report(self, episodes, mf) -> PomdpElboReport:
        obs_ll, state_term = _state_terms(episodes, mf.q_states, self.e_obs, self.e_trans)
        return PomdpElboReport(obs_ll + state_term - self.kl_trans - self.kl_obs,
                               obs_ll, state_term, self.kl_trans, self.kl_obs)


def pomdp_elbo(episodes, mf: MeanFieldState) -> PomdpElboReport:
    """ELBO of the factorized posterior, split into its four terms.

    obs_loglik: sum_t E[ln theta_o(o_t | s_t)]
    state_term: -sum_t E_{q(theta_s) q(s_{t-1})} KL(q(s_t) || theta_s(. | s_{t-1}, a_{t-1}))
    kl_trans, kl_obs: Dirichlet KLs of the parameter factors to their priors
    """
    episodes = _episodes(episodes)
    _check(episodes, mf)
    return _Expectations(mf).report(episodes, mf)


def _param_updates(episodes, beliefs, prior_trans, prior_obs):
    counts_trans = np.zeros_like(prior_trans)
    counts_obs = np.zeros_like(prior_obs)
    for ep, b in zip(episodes, beliefs):
        if ep.horizon == 0:
            continue
        full = _with_s0(ep, b)
        for t, a in enumerate(ep.actions):
            counts_trans[:, a, :] += np.outer(full[t], full[t + 1])
        np.add.at(counts_obs.T, list(ep.observations), b)
    return prior_trans + counts_trans, prior_obs + counts_obs


def cavi_sweep(episodes, mf: MeanFieldState, trace: list | None = None) -> MeanFieldState:
    """One coordinate-ascent sweep; returns an updated copy of ``mf``.

    Order: every q(s_t) in time order (per episode), then q(theta_s), then
    q(theta_o). If ``trace`` is a list, the ELBO after each individual
    factor update is appended to it.
    """
    episodes = _episodes(episodes)
    _check(episodes, mf)
    mf = mf.copy()
    ex = _Expectations(mf)

    def record():
        if trace is not None:
            trace.append(ex.report(episodes, mf).elbo)

    for ep, b in zip(episodes, mf.q_states):
        T = ep.horizon
        prev = np.zeros(ep.n_states)
        prev[ep.s0] = 1.0
        for i in range(T):
            log_q = ex.e_obs[:, ep.observations[i]] + prev @ ex.e_trans[:, ep.actions[i], :]
            if i + 1 < T:
                log_q = log_q + ex.e_trans[:, ep.actions[i + 1], :] @ b[i + 1]
            w = np.exp(log_q - log_q.max())
            b[i] = w / w.sum()
            prev = b[i]
            record()

    # both parameter updates depend only on the (now fixed) state beliefs
    new_trans, new_obs = _param_updates(episodes, mf.q_states, mf.prior_trans, mf.prior_obs)
    mf.q_trans = new_trans
    ex.set_trans(mf)
    record()
    mf.q_obs = new_obs
    ex.set_obs(mf)
    record()
    return mf


def init_mean_field(episodes, prior_trans, prior_obs, beliefs=None) -> MeanFieldState:
    """Mean-field state from initial beliefs (uniform by default).

    The parameter factors are set by their closed-form updates given those
    beliefs, so random beliefs carry through to the first sweep.
    """
    episodes = _episodes(episodes)
    prior_trans = np.asarray(prior_trans, dtype=float)
    prior_obs = np.asarray(prior_obs, dtype=float)
    if np.any(prior_trans <= 0) or np.any(prior_obs <= 0):
        raise InvalidSpec("prior concentrations must be positive")
    S = prior_obs.shape[0]
    if beliefs is None:
        beliefs = [np.full((ep.horizon, S), 1.0 / S) for ep in episodes]
    beliefs = [np.array(b, dtype=float).reshape(ep.horizon, S) for ep, b in zip(episodes, beliefs)]
    q_trans, q_obs = _param_updates(episodes, beliefs, prior_trans, prior_obs)
    mf = MeanFieldState(q_trans, q_obs, beliefs, prior_trans, prior_obs)
    _check(episodes, mf)
    return mf


def fit_pomdp(episodes, prior_trans, prior_obs, tol: float = 1e-10, max_sweeps: int = 1000,
              n_restarts: int = DEFAULT_RESTARTS, seed: int = 0, strict: bool = True,
              record_updates: bool = False) -> PomdpFit:
    """Run CAVI to convergence from several initializations; keep the best.

    Restart 0 starts from uniform beliefs; restart r > 0 draws beliefs from
    a flat Dirichlet using the stream (seed, "restart", r). A run stops
    when a sweep raises the ELBO by less than ``tol``. If any restart hits
    ``max_sweeps`` first, ``NotConverged`` is raised with the best fit
    attached (unless ``strict`` is False).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    episodes = _episodes(episodes)
    S = np.asarray(prior_obs).shape[0]
    best = None
    converged_all = True
    restart_elbos = []
    for r in range(n_restarts):
        if r == 0:
            beliefs = None
        else:
            rng = make_rng(seed, "restart", r)
            beliefs = [rng.dirichlet(np.ones(S), size=ep.horizon) for ep in episodes]
        mf = init_mean_field(episodes, prior_trans, prior_obs, beliefs)
        report_trace = [pomdp_elbo(episodes, mf)]
        elbo_trace = [report_trace[0].elbo]
        update_trace = [elbo_trace[0]] if record_updates else None
        converged = False
        sweeps = 0
        while sweeps < max_sweeps:
            mf = cavi_sweep(episodes, mf, update_trace)
            sweeps += 1
            report_trace.append(pomdp_elbo(episodes, mf)._replace(iteration=sweeps))
            elbo_trace.append(report_trace[-1].elbo)
            if elbo_trace[-1] - elbo_trace[-2] < tol:
                converged = True
                break
        converged_all &= converged or max_sweeps == 0
        report = pomdp_elbo(episodes, mf)._replace(iteration=sweeps)
        restart_elbos.append(report.elbo)
        if best is None or report.elbo > best.report.elbo:
            best = PomdpFit(mf, report, r, sweeps, elbo_trace, update_trace or [], report_trace=report_trace)
    best.restart_elbos = restart_elbos
    if strict and not converged_all:
        raise NotConverged(f"CAVI did not converge within {max_sweeps} sweeps", best=best)
    return best


def _params(mf_or_params):
    if isinstance(mf_or_params, MeanFieldState):
        return np.asarray(mf_or_params.q_trans, float), np.asarray(mf_or_params.q_obs, float)
    q_trans, q_obs = mf_or_params
    return np.asarray(q_trans, float), np.asarray(q_obs, float)


def _polya_log_prob(conc, rows, outcomes) -> float:
    """Log probability of a sequence of draws from shared Dirichlet rows."""
    seen = {}
    lp = 0.0
    for row, k in zip(rows, outcomes):
        c = seen.setdefault(row, np.zeros(conc.shape[-1]))
        alpha = conc[row]
        lp += np.log(alpha[k] + c[k]) - np.log(alpha.sum() + c.sum())
        c[k] += 1
    return lp


def predict_observations(mf, s0, actions, n_samples: int | None = None, seed=None,
                         exact: bool = False, guard: int = 10**6):
    """Predict o_1..o_T* for a given s_0 and action sequence.

    ``mf`` is a MeanFieldState or a (q_trans, q_obs) pair of concentration
    tables; state beliefs from training are not used.

    Sample mode returns an int array (n_samples, T*): one theta_s and one
    theta_o are drawn per sequence and held fixed during the rollout.
    Exact mode returns the joint table of shape (O,) * T*, with latent
    states and both parameter tables marginalized.
    """
    q_trans, q_obs = _params(mf)
    S, A, O = q_trans.shape[0], q_trans.shape[1], q_obs.shape[1]
    actions = [int(a) for a in actions]
    if not actions:
        raise ValueError("action sequence must be non-empty")
    if not 0 <= int(s0) < S or any(not 0 <= a < A for a in actions):
        raise InvalidSpec("state or action index out of range")
    T = len(actions)

    if exact:
        if (S * O) ** T > guard:
            raise TooLarge(f"({S}*{O})^{T} joint sequences exceed the guard of {guard}")
        joint = np.zeros((O,) * T)
        for states in itertools.product(range(S), repeat=T):
            prev = (int(s0),) + states[:-1]
            lp_s = _polya_log_prob(q_trans, list(zip(prev, actions)), states)
            for obs in itertools.product(range(O), repeat=T):
                joint[obs] += np.exp(lp_s + _polya_log_prob(q_obs, states, obs))
        return joint

    if n_samples is None or seed is None:
        raise ValueError("sample mode needs n_samples and seed")
    rng = make_rng(seed, "predict_observations")
    theta_s = sample_dirichlet_rows(np.broadcast_to(q_trans, (n_samples,) + q_trans.shape), rng)
    theta_o = sample_dirichlet_rows(np.broadcast_to(q_obs, (n_samples,) + q_obs.shape), rng)
    rows = np.arange(n_samples)
    s = np.full(n_samples, int(s0))
    out = np.empty((n_samples, T), dtype=np.int64)
    for t, a in enumerate(actions):
        s = draw_rows(theta_s[rows, s, a], rng)
        out[:, t] = draw_rows(theta_o[rows, s], rng)
    return out


def forward_filter(trans, obs, s0, actions, observations, return_all: bool = False):
    """Bayes filter b_t(s) for a known model.

    ``trans`` is P(s'|s,a) with shape (S, A, S) and ``obs`` is P(o|s) with
    shape (S, O). Returns the belief after the last observation, or all
    beliefs b_0..b_t if ``return_all``.
    """
    trans = np.asarray(trans, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if len(actions) != len(observations):
        raise ShapeMismatch("action and observation prefixes must have equal length")
    b = np.zeros(trans.shape[0])
    b[int(s0)] = 1.0
    history = [b]
    for t, (a, o) in enumerate(zip(actions, observations)):
        b = obs[:, int(o)] * (b @ trans[:, int(a), :])
        z = b.sum()
        if z <= 0:
            raise ZeroLikelihoodPrefix(f"observation prefix has zero probability at step {t + 1}")
        b = b / z
        history.append(b)
    return np.array(history) if return_all else b


def filter_beliefs(mf, s0, actions, observations, return_all: bool = False):
    """Forward filter with posterior-mean plug-in parameters."""
    q_trans, q_obs = _params(mf)
    trans = q_trans / q_trans.sum(axis=-1, keepdims=True)
    obs = q_obs / q_obs.sum(axis=-1, keepdims=True)
    return forward_filter(trans, obs, s0, actions, observations, return_all)

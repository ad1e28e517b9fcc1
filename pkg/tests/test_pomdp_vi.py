import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidm.core_prob import make_rng
from vidm.envs import EnvBundle, collect_transitions
from vidm.errors import NotConverged, ShapeMismatch, TooLarge, ZeroLikelihoodPrefix
from vidm.model_vi import TransitionDataset, fit_variational, sequence_log_prob
from vidm.pomdp_vi import (
    MeanFieldState,
    PomdpEpisode,
    cavi_sweep,
    filter_beliefs,
    fit_pomdp,
    forward_filter,
    init_mean_field,
    pomdp_elbo,
    predict_observations,
)
from vidm.soft_mdp import FiniteMdp


def random_episode(seed, S=2, A=2, O=2, T=None):
    rng = make_rng(seed, "episode")
    T = int(rng.integers(1, 11)) if T is None else T
    return PomdpEpisode(int(rng.integers(S)), rng.integers(A, size=T), rng.integers(O, size=T), S, A, O)


def random_state(ep, seed):
    rng = make_rng(seed, "mf")
    S, A, O = ep.n_states, ep.n_actions, ep.n_obs
    return MeanFieldState(rng.uniform(0.3, 4, size=(S, A, S)), rng.uniform(0.3, 4, size=(S, O)),
                          [rng.dirichlet(np.ones(S), size=ep.horizon)],
                          rng.uniform(0.3, 2, size=(S, A, S)), rng.uniform(0.3, 2, size=(S, O)))


def log_evidence(ep, prior_trans, prior_obs):
    """ln p(o | s0, a) summing latent paths, with theta integrated out exactly."""
    terms = []
    for states in itertools.product(range(ep.n_states), repeat=ep.horizon):
        lp = sequence_log_prob(prior_trans, ep.s0, ep.actions, states)
        # observations are draws from the rows selected by the states
        seen = {}
        for s, o in zip(states, ep.observations):
            c = seen.setdefault(s, np.zeros(ep.n_obs))
            lp += math.log((prior_obs[s, o] + c[o]) / (prior_obs[s].sum() + c.sum()))
            c[o] += 1
        terms.append(lp)
    m = max(terms)
    return m + math.log(sum(math.exp(t - m) for t in terms))


def longhand_elbo(ep, mf):
    """Term-by-term evaluation at 50 digits, loops only."""
    mpmath.mp.dps = 50
    S, A, O = ep.n_states, ep.n_actions, ep.n_obs
    f = mpmath.mpf

    def elog(row, k):
        return mpmath.digamma(f(row[k])) - mpmath.digamma(sum(f(x) for x in row))

    def lbeta(row):
        return sum(mpmath.loggamma(f(x)) for x in row) - mpmath.loggamma(sum(f(x) for x in row))

    def dkl(q, p):
        return lbeta(p) - lbeta(q) + sum((f(q[k]) - f(p[k])) * elog(q, k) for k in range(len(q)))

    total = f(0)
    prev = [f(1) if s == ep.s0 else f(0) for s in range(S)]
    for t in range(ep.horizon):
        cur = [f(x) for x in mf.q_states[0][t]]
        for k in range(S):
            total += cur[k] * elog(mf.q_obs[k], ep.observations[t])
            if cur[k] > 0:
                total -= cur[k] * mpmath.log(cur[k])
            for j in range(S):
                total += prev[j] * cur[k] * elog(mf.q_trans[j, ep.actions[t]], k)
        prev = cur
    for s in range(S):
        for a in range(A):
            total -= dkl(mf.q_trans[s, a], mf.prior_trans[s, a])
        total -= dkl(mf.q_obs[s], mf.prior_obs[s])
    return float(total)


def tv(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum()


class TestPomdpElbo:
    def test_empty_episode(self):
        ep = PomdpEpisode(0, [], [], 2, 2, 3)
        pt, po = np.full((2, 2, 2), 1.5), np.full((2, 3), 0.5)
        mf = init_mean_field(ep, pt, po)
        assert pomdp_elbo(ep, mf).elbo == 0.0
        mf.q_trans = pt + 1.0
        rep = pomdp_elbo(ep, mf)
        assert rep.elbo == pytest.approx(-rep.kl_trans, abs=1e-14)
        assert rep.kl_trans > 0

    def test_self_consistency_limit(self):
        # deterministic truth: action 0 stays, identity observations
        ep = PomdpEpisode(1, [0, 0, 0], [1, 1, 1], 2, 1, 2)
        big, small = 1e9, 1e-9
        q_trans = np.array([[[big, small]], [[small, big]]])
        q_obs = np.array([[big, small], [small, big]])
        beliefs = np.tile([0.0, 1.0], (3, 1))
        mf = MeanFieldState(q_trans, q_obs, [beliefs], q_trans, q_obs)
        rep = pomdp_elbo(ep, mf)
        assert abs(rep.obs_loglik) < 1e-6
        assert abs(rep.state_term) < 1e-6

    def test_flat_hand_episode(self):
        ep = PomdpEpisode(0, [1, 0], [0, 1], 2, 2, 2)
        mf = init_mean_field(ep, np.ones((2, 2, 2)), np.ones((2, 2)))
        assert pomdp_elbo(ep, mf).elbo == pytest.approx(longhand_elbo(ep, mf), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_longhand(self, seed):
        ep = random_episode(seed, S=3, A=2, O=2, T=4)
        mf = random_state(ep, seed)
        rep = pomdp_elbo(ep, mf)
        assert rep.elbo == pytest.approx(longhand_elbo(ep, mf), abs=1e-10)
        assert rep.elbo == pytest.approx(rep.obs_loglik + rep.state_term - rep.kl_trans - rep.kl_obs, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 3))
    def test_lower_bound(self, seed, T):
        ep = random_episode(seed, T=T)
        mf = random_state(ep, seed)
        assert pomdp_elbo(ep, mf).elbo <= log_evidence(ep, mf.prior_trans, mf.prior_obs) + 1e-12

    def test_fit_approaches_evidence(self):
        ep = random_episode(3, T=3)
        pt, po = np.ones((2, 2, 2)), np.ones((2, 2))
        fit = fit_pomdp(ep, pt, po)
        lz = log_evidence(ep, pt, po)
        assert fit.report.elbo <= lz + 1e-12
        assert lz - fit.report.elbo < 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_label_switching(self, seed):
        ep = random_episode(seed)
        mf = random_state(ep, seed)
        mf.prior_trans = np.full((2, 2, 2), 1.3)
        mf.prior_obs = np.full((2, 2), 0.8)
        perm = np.array([1, 0])
        flipped_ep = PomdpEpisode(perm[ep.s0], ep.actions, ep.observations, 2, 2, 2)
        flipped = MeanFieldState(mf.q_trans[perm][:, :, perm], mf.q_obs[perm], [mf.q_states[0][:, perm]],
                                 mf.prior_trans, mf.prior_obs)
        assert pomdp_elbo(flipped_ep, flipped).elbo == pytest.approx(pomdp_elbo(ep, mf).elbo, abs=1e-12)

    def test_shape_mismatch(self):
        ep = random_episode(0, T=3)
        mf = random_state(random_episode(0, T=4), 0)
        with pytest.raises(ShapeMismatch):
            pomdp_elbo(ep, mf)


class TestCaviSweep:
    def test_fully_observable_reduction(self):
        ep = random_episode(5, T=12)
        prior_trans = np.ones((2, 2, 2))
        prior_obs = 1e-3 + 1e8 * np.eye(2)
        mf = init_mean_field(ep, prior_trans, prior_obs)
        mf.q_obs = prior_obs.copy()
        mf = cavi_sweep(ep, mf)
        np.testing.assert_allclose(mf.q_states[0], np.eye(2)[list(ep.observations)], atol=1e-6)
        tuples = list(zip([ep.s0] + list(ep.observations[:-1]), ep.actions, ep.observations))
        q_ref, _ = fit_variational(TransitionDataset(tuples, 2, 2), prior_trans)
        np.testing.assert_allclose(mf.q_trans, q_ref, atol=1e-6)

    def test_uninformative_observations_keep_symmetry(self):
        ep = PomdpEpisode(0, [0, 1, 1, 0], [0, 1, 0, 0], 2, 2, 2)
        prior_trans = np.ones((2, 2, 2))
        mf = init_mean_field(ep, prior_trans, np.ones((2, 2)))
        mf.q_obs = np.full((2, 2), 3.0)
        # swap both the labels and s0: the result must be the mirrored beliefs
        mirrored = PomdpEpisode(1, ep.actions, ep.observations, 2, 2, 2)
        mf2 = init_mean_field(mirrored, prior_trans, np.ones((2, 2)))
        mf2.q_obs = mf.q_obs.copy()
        a, b = cavi_sweep(ep, mf), cavi_sweep(mirrored, mf2)
        np.testing.assert_allclose(a.q_states[0], b.q_states[0][:, ::-1], atol=1e-14)

    def test_uniform_beliefs_stay_uniform_without_anchor(self):
        # with identical observation rows and symmetric transitions, no update can break the tie
        ep = PomdpEpisode(0, [0, 0, 0], [0, 1, 0], 2, 1, 2)
        mf = MeanFieldState(np.full((2, 1, 2), 2.0), np.full((2, 2), 3.0), [np.full((3, 2), 0.5)],
                            np.ones((2, 1, 2)), np.ones((2, 2)))
        out = cavi_sweep(ep, mf)
        np.testing.assert_allclose(out.q_states[0], 0.5, atol=1e-15)

    def test_monotone_200_sweeps(self):
        ep = random_episode(7, T=8)
        mf = init_mean_field(ep, np.ones((2, 2, 2)), np.ones((2, 2)))
        elbos = [pomdp_elbo(ep, mf).elbo]
        for _ in range(200):
            trace = []
            mf = cavi_sweep(ep, mf, trace)
            assert all(b >= a - 1e-12 for a, b in zip([elbos[-1]] + trace, trace))
            elbos.append(pomdp_elbo(ep, mf).elbo)
        assert abs(elbos[-1] - elbos[-2]) < 1e-10

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_per_update(self, seed):
        ep = random_episode(seed, S=3, O=3)
        mf = random_state(ep, seed)
        trace = [pomdp_elbo(ep, mf).elbo]
        for _ in range(5):
            mf = cavi_sweep(ep, mf, trace)
        assert np.all(np.diff(trace) >= -1e-12)

    def test_does_not_mutate_input(self):
        ep = random_episode(2)
        mf = random_state(ep, 2)
        before = mf.copy()
        cavi_sweep(ep, mf)
        assert np.array_equal(mf.q_trans, before.q_trans)
        assert np.array_equal(mf.q_states[0], before.q_states[0])


class TestFitPomdp:
    def test_deterministic(self):
        ep = random_episode(11)
        a = fit_pomdp(ep, np.ones((2, 2, 2)), np.ones((2, 2)), n_restarts=1, seed=3)
        b = fit_pomdp(ep, np.ones((2, 2, 2)), np.ones((2, 2)), n_restarts=1, seed=3)
        assert a.report == b.report
        assert np.array_equal(a.state.q_trans, b.state.q_trans)

    def test_empty_episode(self):
        ep = PomdpEpisode(0, [], [], 2, 2, 2)
        pt, po = np.full((2, 2, 2), 0.7), np.full((2, 2), 1.1)
        fit = fit_pomdp(ep, pt, po)
        assert fit.report.elbo == 0.0
        np.testing.assert_array_equal(fit.state.q_trans, pt)
        np.testing.assert_array_equal(fit.state.q_obs, po)

    def test_best_of_restarts(self):
        ep = random_episode(12, T=10)
        fit = fit_pomdp(ep, np.ones((2, 2, 2)), np.ones((2, 2)), n_restarts=4, seed=1)
        assert len(fit.restart_elbos) == 4
        assert fit.report.elbo == max(fit.restart_elbos)
        assert fit.restart_elbos[fit.restart] == fit.report.elbo

    def test_not_converged(self):
        ep = random_episode(13, T=10)
        with pytest.raises(NotConverged) as exc:
            fit_pomdp(ep, np.ones((2, 2, 2)), np.ones((2, 2)), max_sweeps=1, n_restarts=2)
        assert exc.value.best is not None

    def test_generator_recovery(self):
        # stay/flip dynamics and a near-identity sensor; the observation prior leans
        # towards the diagonal, which fixes the labelling of the latent states
        p = 0.97
        trans = np.array([[[p, 1 - p], [1 - p, p]], [[1 - p, p], [p, 1 - p]]])
        obs = np.array([[p, 1 - p], [1 - p, p]])
        env = EnvBundle(FiniteMdp([1.0, 0.0], trans, np.zeros((2, 2)), 50), obs, "stay-flip")
        _, eps = collect_transitions(env, [0.5, 0.5], 1, 50, seed=0)
        fit = fit_pomdp(eps, np.full((2, 2, 2), 0.1), np.ones((2, 2)) + np.eye(2), seed=0)
        mf = fit.state
        assert 0.5 * np.abs(mf.mean_trans() - trans).sum(-1).max() <= 0.1
        assert 0.5 * np.abs(mf.mean_obs() - obs).sum(-1).max() <= 0.1

    def test_multiple_episodes_share_parameters(self):
        eps = [random_episode(s, T=5) for s in (20, 21, 22)]
        fit = fit_pomdp(eps, np.ones((2, 2, 2)), np.ones((2, 2)), n_restarts=2)
        assert len(fit.state.q_states) == 3
        total = fit.state.q_trans.sum() - 8.0
        assert total == pytest.approx(15.0, abs=1e-9)


class TestPredictObservations:
    def test_dirac_deterministic(self):
        big, small = 1e8, 1e-8
        q_trans = np.array([[[small, big]], [[big, small]]])
        q_obs = np.array([[big, small, small], [small, small, big]])
        seqs = predict_observations((q_trans, q_obs), 0, [0] * 4, n_samples=100, seed=0)
        assert np.all(seqs == [2, 0, 2, 0])

    def test_one_step_composition(self):
        big = 1e12
        theta_s = np.array([0.2, 0.5, 0.3])
        theta_o = np.array([[0.9, 0.1], [0.4, 0.6], [0.25, 0.75]])
        q_trans = np.tile(theta_s * big, (3, 1, 1)).reshape(3, 1, 3)
        got = predict_observations((q_trans, theta_o * big), 1, [0], exact=True)
        np.testing.assert_allclose(got, theta_s @ theta_o, atol=1e-12)

    def test_monte_carlo_matches_exact(self):
        q_trans = np.array([[[2.0, 1.0], [1.0, 3.0]], [[0.5, 0.5], [4.0, 1.0]]])
        q_obs = np.array([[3.0, 1.0], [1.0, 2.0]])
        exact = predict_observations((q_trans, q_obs), 0, [0, 1], exact=True)
        seqs = predict_observations((q_trans, q_obs), 0, [0, 1], n_samples=10**5, seed=4)
        mc = np.bincount(seqs[:, 0] * 2 + seqs[:, 1], minlength=4) / 10**5
        assert exact.sum() == pytest.approx(1.0, abs=1e-12)
        assert tv(mc, exact.ravel()) < 0.01

    def test_guard(self):
        with pytest.raises(TooLarge):
            predict_observations((np.ones((3, 1, 3)), np.ones((3, 3))), 0, [0] * 7, exact=True)


class TestFiltering:
    @staticmethod
    def enumerate_filter(trans, obs, s0, actions, observations):
        S = trans.shape[0]
        post = np.zeros(S)
        for path in itertools.product(range(S), repeat=len(actions)):
            p, prev = 1.0, s0
            for s, a, o in zip(path, actions, observations):
                p *= trans[prev, a, s] * obs[s, o]
                prev = s
            post[path[-1]] += p
        return post / post.sum()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_matches_enumeration(self, seed, T):
        rng = make_rng(seed, "filter")
        trans = rng.dirichlet(np.ones(2), size=(2, 2))
        obs = rng.dirichlet(np.ones(2), size=2)
        ep = random_episode(seed, T=T)
        got = forward_filter(trans, obs, ep.s0, ep.actions, ep.observations)
        ref = self.enumerate_filter(trans, obs, ep.s0, ep.actions, ep.observations)
        np.testing.assert_allclose(got, ref, atol=1e-10)

    def test_identity_channel(self):
        ep = random_episode(1, S=3, O=3, T=6)
        trans = make_rng(1, "t").dirichlet(np.ones(3), size=(3, 2))
        hist = forward_filter(trans, np.eye(3), ep.s0, ep.actions, ep.observations, return_all=True)
        np.testing.assert_allclose(hist[1:], np.eye(3)[list(ep.observations)], atol=1e-15)

    def test_uninformative_is_prediction(self):
        q_trans = make_rng(2, "t").uniform(0.5, 3, size=(2, 2, 2))
        q_obs = np.full((2, 3), 2.0)
        actions = [0, 1, 1, 0]
        b = filter_beliefs((q_trans, q_obs), 1, actions, [2, 0, 1, 1])
        mean = q_trans / q_trans.sum(-1, keepdims=True)
        pred = np.array([0.0, 1.0])
        for a in actions:
            pred = pred @ mean[:, a, :]
        np.testing.assert_allclose(b, pred, atol=1e-15)

    def test_plug_in_uses_posterior_means(self):
        q_trans = np.array([[[1.0, 3.0]], [[2.0, 2.0]]])
        q_obs = np.array([[4.0, 1.0], [1.0, 4.0]])
        b = filter_beliefs((q_trans, q_obs), 0, [0, 0], [1, 0])
        ref = self.enumerate_filter(q_trans / 4, q_obs / 5, 0, [0, 0], [1, 0])
        np.testing.assert_allclose(b, ref, atol=1e-12)

    def test_zero_likelihood_prefix(self):
        with pytest.raises(ZeroLikelihoodPrefix):
            # neither state can emit observation 1
            forward_filter(np.full((2, 1, 2), 0.5), [[1.0, 0.0], [1.0, 0.0]], 0, [0], [1])

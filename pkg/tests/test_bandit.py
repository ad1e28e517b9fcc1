import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidm.bandit import (
    BanditProblem,
    bandit_elbo,
    bandit_exact_elbo,
    bandit_log_evidence,
    bandit_log_partition,
    blahut_arimoto,
    greedy_policy,
    soft_policy,
)
from vidm.core_prob import kl_divergence, make_rng
from vidm.envs import fixture_b1
from vidm.errors import NotConverged, SupportViolation
from vidm.soft_mdp import simplex_grid

UNIFORM2 = np.array([0.5, 0.5])


def random_bandit(seed, s_max=4, a_max=4):
    rng = make_rng(seed, "bandit")
    s, a = int(rng.integers(1, s_max + 1)), int(rng.integers(2, a_max + 1))
    return BanditProblem(rng.dirichlet(np.ones(s)), rng.normal(size=(s, a)))


def grid_best_rows(p, pi0, beta, resolution):
    """Rowwise maximizer of the per-state objective over a simplex grid."""
    grid = simplex_grid(p.n_actions, resolution)
    best = []
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(grid > 0, np.log(grid / pi0), 0.0)
    kl = np.sum(grid * log_ratio, axis=1)
    for s in range(p.n_states):
        score = grid @ p.reward[s] - beta * kl
        best.append(grid[np.argmax(score)])
    return np.array(best)


class TestBanditElbo:
    def test_zero_reward_prior_policy(self):
        p = BanditProblem(UNIFORM2, np.zeros((2, 2)))
        assert bandit_elbo(p, UNIFORM2, np.tile(UNIFORM2, (2, 1)), 1.0).objective == 0.0

    def test_beta_zero_is_expected_reward(self):
        p = fixture_b1()
        pi = np.array([[0.3, 0.7], [0.9, 0.1]])
        sol = bandit_elbo(p, UNIFORM2, pi, 0.0)
        assert sol.objective == pytest.approx(0.5 * 0.3 + 0.5 * 0.1, abs=1e-15)

    def test_greedy_diagonal(self):
        sol = bandit_elbo(fixture_b1(), UNIFORM2, np.eye(2), 1.0)
        assert sol.objective == pytest.approx(1 - math.log(2), abs=1e-15)
        assert sol.objective == pytest.approx(sol.reward_term - sol.beta * sol.kl_term, abs=1e-10)

    def test_support_violation(self):
        with pytest.raises(SupportViolation):
            bandit_elbo(fixture_b1(), [1.0, 0.0], np.eye(2), 1.0)


class TestSoftPolicy:
    def test_large_beta_returns_prior(self):
        p = random_bandit(0)
        pi0 = make_rng(0, "pi0").dirichlet(np.ones(p.n_actions))
        np.testing.assert_allclose(soft_policy(p, pi0, 1e6), np.tile(pi0, (p.n_states, 1)), atol=1e-5)

    def test_constant_rewards(self):
        p = BanditProblem([0.4, 0.6], [[2.0, 2.0, 2.0], [-1.0, -1.0, -1.0]])
        pi0 = [0.2, 0.3, 0.5]
        np.testing.assert_allclose(soft_policy(p, pi0, 0.7), [pi0, pi0], atol=1e-15)

    def test_softmax_closed_form_and_grid(self):
        p = BanditProblem([1.0], [[1.0, 0.0]])
        pi = soft_policy(p, UNIFORM2, 1.0)
        e = math.e
        np.testing.assert_allclose(pi[0], [e / (1 + e), 1 / (1 + e)], atol=1e-15)
        np.testing.assert_allclose(grid_best_rows(p, UNIFORM2, 1.0, 1e-3)[0], pi[0], atol=1e-3)

    def test_beta_zero_greedy_lowest_index(self):
        p = BanditProblem([0.5, 0.5], [[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
        np.testing.assert_array_equal(soft_policy(p, [1 / 3] * 3, 0.0), [[1, 0, 0], [0, 1, 0]])
        np.testing.assert_array_equal(greedy_policy(p.reward, [0.0, 0.5, 0.5]), [[0, 1, 0], [0, 1, 0]])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([0.1, 0.5, 1.0, 3.0]))
    def test_beats_rowwise_grid(self, seed, beta):
        p = random_bandit(seed)
        pi0 = make_rng(seed, "pi0").dirichlet(np.ones(p.n_actions))
        best = bandit_elbo(p, pi0, soft_policy(p, pi0, beta), beta).objective
        grid_pi = grid_best_rows(p, pi0, beta, 1e-2 if p.n_actions <= 3 else 0.05)
        assert best >= bandit_elbo(p, pi0, grid_pi, beta).objective - 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_tradeoff_monotone_in_beta(self, seed):
        p = random_bandit(seed)
        pi0 = np.full(p.n_actions, 1 / p.n_actions)
        terms = [bandit_elbo(p, pi0, soft_policy(p, pi0, b), b) for b in (10, 1, 0.1, 0.01)]
        for a, b in zip(terms, terms[1:]):
            assert b.reward_term >= a.reward_term - 1e-12
            assert b.kl_term >= a.kl_term - 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([1e-3, 1e-4]))
    def test_argmax_invariance(self, seed, beta):
        rng = make_rng(seed, "argmax")
        s, a = 3, 4
        reward = rng.uniform(0, 1, size=(s, a))
        top = rng.integers(a, size=s)
        reward[np.arange(s), top] = reward.max(axis=1) + 0.1
        p = BanditProblem(np.full(s, 1 / s), reward)
        pi = soft_policy(p, np.full(a, 1 / a), beta)
        np.testing.assert_array_equal(pi.argmax(axis=1), top)


class TestLogPartition:
    def test_zero(self):
        assert bandit_log_partition(BanditProblem(UNIFORM2, np.zeros((2, 2)))) == pytest.approx(math.log(4), abs=1e-15)

    def test_constant(self):
        p = BanditProblem([0.2, 0.3, 0.5], np.full((3, 2), 1.7))
        assert bandit_log_partition(p) == pytest.approx(1.7 + math.log(6), abs=1e-14)

    def test_diagonal(self):
        assert bandit_log_partition(fixture_b1()) == pytest.approx(math.log(2 + 2 * math.e), abs=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_exact_gap_identity(self, seed):
        p = random_bandit(seed)
        rng = make_rng(seed, "q")
        pi0 = rng.dirichlet(np.ones(p.n_actions))
        pi = rng.dirichlet(np.ones(p.n_actions), size=p.n_states)
        log_ev = bandit_log_evidence(p, pi0)
        val = bandit_exact_elbo(p, pi0, pi)
        # q(s, a) = p(s) pi(a|s); the posterior is proportional to p(s) pi0(a) exp(R)
        q = (p.state_dist[:, None] * pi).ravel()
        post = p.state_dist[:, None] * pi0[None, :] * np.exp(p.reward)
        post = (post / post.sum()).ravel()
        assert val <= log_ev + 1e-12
        assert abs((log_ev - val) - kl_divergence(q, post)) < 1e-10


class TestBlahutArimoto:
    def test_state_independent_rewards(self):
        p = BanditProblem([0.3, 0.7], [[1.0, 0.5, 0.0], [1.0, 0.5, 0.0]])
        sol = blahut_arimoto(p, 0.5)
        np.testing.assert_allclose(sol.policy[0], sol.policy[1], atol=1e-12)
        np.testing.assert_allclose(sol.prior, sol.policy[0], atol=1e-8)

    def test_large_beta_collapses(self):
        sol = blahut_arimoto(fixture_b1(), 1e4)
        assert sol.kl_term < 1e-6

    def test_diagonal_matches_grid(self):
        p = fixture_b1()
        sol = blahut_arimoto(p, 1.0)
        # 2-D grid over pi0; for each grid prior the policy rows come from their own grid
        best = -np.inf
        for x in np.arange(1, 1000) / 1000:
            pi0 = np.array([x, 1 - x])
            rows = grid_best_rows(p, pi0, 1.0, 1e-3)
            best = max(best, bandit_elbo(p, pi0, rows, 1.0).objective)
        assert abs(sol.objective - best) < 1e-5
        assert sol.objective >= best - 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_fixed_point_and_monotone(self, seed):
        p = random_bandit(seed)
        sol = blahut_arimoto(p, 0.5)
        objs = [t[0] for t in sol.trace]
        assert all(b >= a - 1e-12 for a, b in zip(objs, objs[1:]))
        assert np.max(np.abs(sol.prior - p.state_dist @ sol.policy)) < 1e-8
        assert sol.objective == pytest.approx(sol.reward_term - sol.beta * sol.kl_term, abs=1e-10)

    def test_not_converged_carries_best(self):
        p = BanditProblem([0.2, 0.3, 0.5], [[1.0, 0.2, 0.0], [0.1, 0.9, 0.3], [0.0, 0.4, 1.1]])
        assert blahut_arimoto(p, 0.3).iterations > 2
        with pytest.raises(NotConverged) as exc:
            blahut_arimoto(p, 0.3, max_iters=2)
        assert exc.value.best is not None
        assert blahut_arimoto(p, 0.3, max_iters=2, strict=False).iterations == 2

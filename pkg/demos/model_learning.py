# %% [markdown]
# # Learning a transition model with Dirichlet posteriors
#
# With conjugate priors the variational optimum is the exact posterior, so
# the bound equals the log evidence. Predictions share one sampled model
# along a rollout, which couples the predicted states.

# %%
import numpy as np

from vidm.envs import collect_transitions, make_random_env
from vidm.model_vi import TransitionDataset, fit_variational, model_elbo, predict_states

np.set_printoptions(precision=4, suppress=True)

# %% data from a random three-state environment
env = make_random_env(3, 2, seed=0)
data, _ = collect_transitions(env, [0.5, 0.5], n_episodes=20, horizon=10, seed=1)
prior = np.ones((3, 2, 3))
q, report = fit_variational(data, prior)
print(len(data), "transitions; ELBO", report.elbo, "= log evidence")

# any other variational table scores lower
print("perturbed ELBO", model_elbo(data, prior, q * 1.3).elbo)

# %% posterior mean approaches the true table as data accumulate
for n_episodes in (2, 20, 200):
    d, _ = collect_transitions(env, [0.5, 0.5], n_episodes, 10, seed=2)
    qn, _ = fit_variational(d, prior)
    err = np.abs(qn / qn.sum(-1, keepdims=True) - env.mdp.trans).max()
    print(f"{len(d):5d} transitions: max error of posterior mean {err:.3f}")

# %% the coupling effect: one flat row, two steps
flat = np.ones((2, 1, 2))
exact = predict_states(flat, 0, [0, 0], exact=True)
print("exact joint\n", exact)
print("independent steps would give 0.25 everywhere")

samples = predict_states(flat, 0, [0, 0], n_samples=100_000, seed=0)
print("P(0, 0) by rollouts:", np.mean((samples == 0).all(axis=1)))

# %% three observed repeats of one transition
three = TransitionDataset([[0, 0, 1]] * 3, 2, 1)
print("evidence of three repeats:", fit_variational(three, flat)[1].elbo, "= ln(1/4)")

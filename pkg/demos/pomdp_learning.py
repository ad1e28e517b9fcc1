# %% [markdown]
# # Hidden states: mean-field learning and filtering
#
# Coordinate ascent alternates between beliefs over hidden states and the
# Dirichlet factors of the transition and observation tables. Every factor
# update raises the bound.

# %%
import numpy as np

from vidm.envs import EnvBundle, collect_transitions
from vidm.pomdp_vi import filter_beliefs, fit_pomdp, forward_filter, predict_observations
from vidm.soft_mdp import FiniteMdp

np.set_printoptions(precision=3, suppress=True)

# %% a sticky two-state chain seen through a noisy sensor
p = 0.97
trans = np.array([[[p, 1 - p], [1 - p, p]], [[1 - p, p], [p, 1 - p]]])
obs = np.array([[0.97, 0.03], [0.03, 0.97]])
env = EnvBundle(FiniteMdp([1.0, 0.0], trans, np.zeros((2, 2)), 50), obs, "sticky")
_, episodes = collect_transitions(env, [0.5, 0.5], 1, 50, seed=0)

# the diagonal observation prior fixes which hidden label is which
fit = fit_pomdp(episodes, np.full((2, 2, 2), 0.1), np.ones((2, 2)) + np.eye(2), seed=0)
print("best restart", fit.restart, "after", fit.sweeps, "sweeps; ELBO", fit.report.elbo)
print("ELBO per sweep (first 5):", np.round(fit.elbo_trace[:5], 3))
print("learned transitions (mean)\n", fit.state.mean_trans())
print("learned sensor (mean)\n", fit.state.mean_obs())

# %% filtering with the learned model versus the true one
ep = episodes[0]
learned = filter_beliefs(fit.state, ep.s0, ep.actions[:10], ep.observations[:10], return_all=True)
truth = forward_filter(trans, obs, ep.s0, ep.actions[:10], ep.observations[:10], return_all=True)
print("P(s=1) learned:", learned[:, 1])
print("P(s=1) true:   ", truth[:, 1])

# %% predicting future observations from the posterior
joint = predict_observations(fit.state, 0, [0, 0, 1], exact=True)
print("P(o = 0,0,1 | stay, stay, flip) =", joint[0, 0, 1])

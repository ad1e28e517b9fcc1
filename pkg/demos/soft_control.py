# %% [markdown]
# # Soft control as inference
#
# A Gibbs policy trades expected reward against divergence from a prior
# policy. The temperature beta moves it from greedy (beta -> 0) to the
# prior itself (beta -> inf).

# %%
import numpy as np

from vidm.bandit import (BanditProblem, bandit_elbo, bandit_exact_elbo, bandit_log_evidence,
                         blahut_arimoto, soft_policy)
from vidm.envs import GridworldSpec, fixture_b1, fixture_m1, make_gridworld
from vidm.soft_mdp import brute_force_policy_search, soft_backward_induction

np.set_printoptions(precision=4, suppress=True)
pi0 = np.array([0.5, 0.5])

# %% one-step problem with diagonal rewards
b1 = fixture_b1()
for beta in (10.0, 1.0, 0.1, 0.01):
    pi = soft_policy(b1, pi0, beta)
    sol = bandit_elbo(b1, pi0, pi, beta)
    print(f"beta={beta:<5} pi(a=s|s)={pi[0, 0]:.4f}  E[r]={sol.reward_term:.4f}  KL={sol.kl_term:.4f}")

# at beta = 1 the Gibbs policy is the exact posterior over actions, so the bound is tight
print("ELBO", bandit_exact_elbo(b1, pi0, soft_policy(b1, pi0, 1.0)), "log evidence", bandit_log_evidence(b1, pi0))
print("ELBO of the prior policy", bandit_exact_elbo(b1, pi0, np.tile(pi0, (2, 1))))

# %% optimizing the prior as well: the prior converges to the action marginal
p = BanditProblem([0.8, 0.2], [[1.0, 0.0], [0.0, 1.0]])
ba = blahut_arimoto(p, beta=0.5)
print("iterations", ba.iterations, "prior", ba.prior, "marginal", p.state_dist @ ba.policy)

# %% sequential version on the two-state chain
m1 = fixture_m1()
sol = soft_backward_induction(m1, pi0, 1.0)
print("time-indexed policy, P(flip | s):")
print(sol.policy[:, :, 1])
print("objective", sol.objective, "stationary:", sol.is_stationary())

# a grid search over policy rows cannot beat the recursion
grid = brute_force_policy_search(m1, pi0, 1.0, grid_resolution=0.01)
print("grid objective", grid.objective, "gap", sol.objective - grid.objective)

# %% a small gridworld: lower beta concentrates on the path to the goal
env = make_gridworld(GridworldSpec(4, 3, goal=(2, 3), walls=frozenset({(1, 1)}), slip_prob=0.1,
                                   step_reward=-0.05), horizon=6)
uniform = np.full(4, 0.25)
for beta in (1.0, 0.1, 0.01):
    sol = soft_backward_induction(env.mdp, uniform, beta)
    print(f"beta={beta:<5} E[return]={sol.reward_term:.3f}  KL={sol.kl_term:.3f}  "
          f"start policy={sol.policy[0, 0]}")

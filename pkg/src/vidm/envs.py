"""Environment generators and data collection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_prob import conditional_table, draw_rows, make_rng
from .errors import InvalidSpec, ShapeMismatch
from .model_vi import TransitionDataset
from .pomdp_vi import PomdpEpisode
from .soft_mdp import FiniteMdp

__all__ = [
    "GridworldSpec",
    "EnvBundle",
    "make_gridworld",
    "make_random_env",
    "collect_transitions",
    "fixture_b1",
    "fixture_m1",
    "ACTIONS",
]

# up, down, left, right as (row, col) offsets
ACTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class GridworldSpec:
    width: int
    height: int
    goal: tuple
    walls: frozenset = frozenset()
    step_reward: float = 0.0
    goal_reward: float = 1.0
    slip_prob: float = 0.0
    start: tuple | None = None


@dataclass(frozen=True)
class EnvBundle:
    mdp: FiniteMdp
    obs_channel: np.ndarray | None = None
    true_params_tag: str = ""

    def __post_init__(self):
        if self.obs_channel is not None:
            obs = conditional_table(self.obs_channel)
            if obs.ndim != 2 or obs.shape[0] != self.mdp.n_states:
                raise ShapeMismatch("observation channel must have one row per state")
            object.__setattr__(self, "obs_channel", obs)

    @property
    def n_obs(self) -> int | None:
        return None if self.obs_channel is None else self.obs_channel.shape[1]


def make_gridworld(spec: GridworldSpec, horizon: int = 10) -> EnvBundle:
    """Four-action gridworld with slippery moves.

    States are the non-wall cells in row-major order. With probability
    ``1 - slip_prob`` the intended move is taken; otherwise one of the four
    moves is chosen uniformly (so the intended cell gets 1 - slip + slip/4).
    Moves into walls or off the grid leave the agent in place, and the goal
    is absorbing. R(s, a) is ``goal_reward`` in the goal and ``step_reward``
    elsewhere. The episode starts in ``start`` (default: the first cell).
    """
    if spec.width < 1 or spec.height < 1:
        raise InvalidSpec("grid dimensions must be at least 1")
    if not 0.0 <= spec.slip_prob <= 1.0:
        raise InvalidSpec("slip_prob must lie in [0, 1]")
    walls = {tuple(w) for w in spec.walls}
    goal = tuple(spec.goal)
    cells = [(r, c) for r in range(spec.height) for c in range(spec.width) if (r, c) not in walls]
    index = {cell: i for i, cell in enumerate(cells)}
    if goal not in index:
        raise InvalidSpec("goal must be a free cell inside the grid")
    start = tuple(spec.start) if spec.start is not None else cells[0]
    if start not in index:
        raise InvalidSpec("start must be a free cell inside the grid")

    n = len(cells)
    moved = np.empty((n, len(ACTIONS)), dtype=int)
    for i, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(ACTIONS):
            moved[i, a] = index.get((r + dr, c + dc), i)

    trans = np.zeros((n, len(ACTIONS), n))
    for i in range(n):
        if cells[i] == goal:
            trans[i, :, i] = 1.0
            continue
        for a in range(len(ACTIONS)):
            trans[i, a, moved[i, a]] += 1.0 - spec.slip_prob
            for b in range(len(ACTIONS)):
                trans[i, a, moved[i, b]] += spec.slip_prob / len(ACTIONS)

    reward = np.full((n, len(ACTIONS)), float(spec.step_reward))
    reward[index[goal]] = spec.goal_reward
    init = np.zeros(n)
    init[index[start]] = 1.0
    mdp = FiniteMdp(init, trans, reward, horizon)
    return EnvBundle(mdp, None, f"gridworld {spec.height}x{spec.width} slip={spec.slip_prob}")


def make_random_env(n_states: int, n_actions: int, n_obs: int | None = None,
                    concentration: float = 1.0, seed: int = 0, horizon: int = 10) -> EnvBundle:
    """Random tabular environment with symmetric-Dirichlet rows.

    Transition (and observation, if ``n_obs`` is given) rows are drawn from
    Dirichlet(concentration); rewards are uniform on [0, 1] and the initial
    distribution is uniform.
    """
    if min(n_states, n_actions) < 1 or (n_obs is not None and n_obs < 1):
        raise InvalidSpec("counts must be at least 1")
    rng = make_rng(seed, "random_env")
    trans = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    reward = rng.random((n_states, n_actions))
    obs = rng.dirichlet(np.full(n_obs, concentration), size=n_states) if n_obs else None
    # tiny concentrations can produce rows that are all zero after rounding
    trans = _fix_rows(trans)
    if obs is not None:
        obs = _fix_rows(obs)
    mdp = FiniteMdp(np.full(n_states, 1.0 / n_states), trans, reward, horizon)
    return EnvBundle(mdp, obs, f"random S={n_states} A={n_actions} O={n_obs} conc={concentration} seed={seed}")


def _fix_rows(rows):
    rows = np.nan_to_num(rows)
    sums = rows.sum(axis=-1, keepdims=True)
    dead = sums[..., 0] <= 0
    rows[dead] = 1.0 / rows.shape[-1]
    return rows / rows.sum(axis=-1, keepdims=True)


def _behavior_table(env: EnvBundle, behavior, horizon: int) -> np.ndarray:
    S, A = env.mdp.n_states, env.mdp.n_actions
    pol = np.asarray(behavior, dtype=float)
    if pol.ndim == 1:
        pol = np.broadcast_to(pol, (S, A))
    if pol.ndim == 2:
        pol = np.broadcast_to(pol, (max(horizon, 1), S, A))
    if pol.shape[1:] != (S, A) or pol.shape[0] < horizon:
        raise ShapeMismatch(f"behavior policy of shape {pol.shape} does not fit S={S}, A={A}")
    return conditional_table(pol)


def collect_transitions(env: EnvBundle, behavior, n_episodes: int, horizon: int, seed: int,
                        episode_offset: int = 0):
    """Simulate episodes and return the transition multiset.

    ``behavior`` is an action distribution (A,), a stationary policy (S, A)
    or a time-indexed policy (>= horizon, S, A). Episode i draws from the
    stream (seed, "episode", episode_offset + i), so collecting 0..n-1 and
    n..m-1 separately and concatenating equals collecting 0..m-1 at once.

    Returns ``(dataset, episodes)``; ``episodes`` is a list of
    ``PomdpEpisode`` when the bundle has an observation channel, else None.
    """
    mdp = env.mdp
    S, A = mdp.n_states, mdp.n_actions
    pol = _behavior_table(env, behavior, horizon)
    tuples = np.empty((n_episodes * horizon, 3), dtype=np.int64)
    pomdp_eps = [] if env.obs_channel is not None else None
    for e in range(n_episodes):
        rng = make_rng(seed, "episode", episode_offset + e)
        s = int(draw_rows(mdp.init[None, :], rng)[0])
        s0 = s
        acts, obs = [], []
        for t in range(horizon):
            a = int(draw_rows(pol[t, s][None, :], rng)[0])
            s2 = int(draw_rows(mdp.trans[s, a][None, :], rng)[0])
            tuples[e * horizon + t] = (s, a, s2)
            acts.append(a)
            if env.obs_channel is not None:
                obs.append(int(draw_rows(env.obs_channel[s2][None, :], rng)[0]))
            s = s2
        if pomdp_eps is not None:
            pomdp_eps.append(PomdpEpisode(s0, acts, obs, S, A, env.n_obs))
    return TransitionDataset(tuples, S, A), pomdp_eps


def fixture_b1():
    """Two-state diagonal-reward bandit with p(s) = [0.5, 0.5]."""
    from .bandit import BanditProblem

    return BanditProblem([0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]])


def fixture_m1(horizon: int = 2) -> FiniteMdp:
    """Two-state stay/flip chain rewarded for being in state 1.

    Action 0 keeps the state, action 1 flips it; the start is uniform.
    """
    trans = np.zeros((2, 2, 2))
    trans[0, 0, 0] = trans[1, 0, 1] = 1.0
    trans[0, 1, 1] = trans[1, 1, 0] = 1.0
    reward = np.array([[0.0, 0.0], [1.0, 1.0]])
    return FiniteMdp([0.5, 0.5], trans, reward, horizon)

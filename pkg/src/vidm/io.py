"""JSON problem/posterior files and the CSV run report.

Schemas (the ``"schema"`` key is written on output and optional on input):

    model.v1      {"theta_grid": [...], "prior": [...], "loglik": [[...], ...]}
    bandit.v1     {"p_s": [...], "reward": [[...]]}
    mdp.v1        {"init": [...], "trans": [[[...]]], "reward": [[...]], "horizon": T,
                   optional "obs": [[...]]}
    dataset.v1    {"n_states": S, "n_actions": A, "tuples": [[s, a, s2], ...]}
    posterior.v1  {"conc": [[[...]]]}, plus "conc_obs" for POMDP posteriors
    episode.v1    {"s0": k, "actions": [...], "observations": [...],
                   "n_states": S, "n_actions": A, "n_obs": O}
                  (a file may also hold {"episodes": [episode, ...]})
    policy.v1     {"policy": [[[...]]]}  time-indexed (T+1, S, A) or stationary (S, A)
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bandit import BanditProblem
from .envs import EnvBundle
from .evidence import DiscreteGenerativeModel
from .model_vi import TransitionDataset
from .pomdp_vi import PomdpEpisode
from .soft_mdp import FiniteMdp

REPORT_HEADER = [
    "run_id", "subcommand", "problem_id", "beta", "iteration",
    "elbo", "reward_term", "kl_term", "wall_ms", "seed",
]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"cannot serialize {type(x)}")


def dump_json(obj, path) -> None:
    text = json.dumps(obj, default=_jsonable, indent=1, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_json(path):
    with open(path) as f:
        return json.load(f)


def model_from_json(d) -> DiscreteGenerativeModel:
    loglik = [[-math.inf if v is None else v for v in row] for row in d["loglik"]]
    grid = np.asarray(d["theta_grid"], dtype=float) if "theta_grid" in d else None
    return DiscreteGenerativeModel(d["prior"], loglik, grid)


def bandit_from_json(d) -> BanditProblem:
    return BanditProblem(d["p_s"], d["reward"])


def bandit_to_json(p: BanditProblem) -> dict:
    return {"schema": "bandit.v1", "p_s": p.state_dist, "reward": p.reward}


def mdp_from_json(d) -> FiniteMdp:
    return FiniteMdp(d["init"], d["trans"], d["reward"], d["horizon"])


def env_from_json(d) -> EnvBundle:
    return EnvBundle(mdp_from_json(d), d.get("obs"), d.get("tag", ""))


def env_to_json(env: EnvBundle) -> dict:
    m = env.mdp
    out = {"schema": "mdp.v1", "init": m.init, "trans": m.trans, "reward": m.reward,
           "horizon": m.horizon, "tag": env.true_params_tag}
    if env.obs_channel is not None:
        out["obs"] = env.obs_channel
    return out


def dataset_from_json(d) -> TransitionDataset:
    return TransitionDataset(np.asarray(d["tuples"], dtype=np.int64).reshape(-1, 3), d["n_states"], d["n_actions"])


def dataset_to_json(data: TransitionDataset) -> dict:
    return {"schema": "dataset.v1", "n_states": data.n_states, "n_actions": data.n_actions,
            "tuples": data.tuples}


def episodes_from_json(d) -> list[PomdpEpisode]:
    items = d["episodes"] if "episodes" in d else [d]
    return [PomdpEpisode(e["s0"], e["actions"], e["observations"], e["n_states"], e["n_actions"], e["n_obs"])
            for e in items]


def episode_to_json(ep: PomdpEpisode) -> dict:
    return {"s0": ep.s0, "actions": list(ep.actions), "observations": list(ep.observations),
            "n_states": ep.n_states, "n_actions": ep.n_actions, "n_obs": ep.n_obs}


def episodes_to_json(eps) -> dict:
    eps = list(eps)
    if len(eps) == 1:
        return {"schema": "episode.v1", **episode_to_json(eps[0])}
    return {"schema": "episode.v1", "episodes": [episode_to_json(e) for e in eps]}


def posterior_to_json(conc, conc_obs=None) -> dict:
    out = {"schema": "posterior.v1", "conc": np.asarray(conc)}
    if conc_obs is not None:
        out["conc_obs"] = np.asarray(conc_obs)
    return out


def posterior_from_json(d):
    conc = np.asarray(d["conc"], dtype=float)
    conc_obs = np.asarray(d["conc_obs"], dtype=float) if "conc_obs" in d else None
    return conc, conc_obs


def policy_to_json(policy) -> dict:
    return {"schema": "policy.v1", "policy": np.asarray(policy)}


def policy_from_json(d) -> np.ndarray:
    return np.asarray(d["policy"], dtype=float)


@dataclass
class RunRecord:
    run_id: str
    subcommand: str
    problem_id: str
    beta: float | None
    iteration: int
    elbo: float
    reward_term: float
    kl_term: float
    wall_ms: float
    seed: int


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_report(records, path) -> None:
    """Write run records as CSV, one row per record in iteration order.

    Reals are rendered with 17 significant digits so they round-trip
    exactly; a missing beta is an empty field.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    records.sort(key=lambda r: r.iteration)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in records:
            w.writerow([
                r.run_id, r.subcommand, r.problem_id, _fmt(r.beta), int(r.iteration),
                _fmt(r.elbo), _fmt(r.reward_term), _fmt(r.kl_term), _fmt(r.wall_ms), int(r.seed),
            ])


def read_report(path) -> list[RunRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(RunRecord(
                row["run_id"], row["subcommand"], row["problem_id"],
                float(row["beta"]) if row["beta"] else None, int(row["iteration"]),
                float(row["elbo"]), float(row["reward_term"]), float(row["kl_term"]),
                float(row["wall_ms"]), int(row["seed"]),
            ))
    return out

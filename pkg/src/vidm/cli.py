"""Command-line interface: ``vidm <subcommand> [flags]``.

Exit status is 0 on success, 2 on usage errors and 1 on numeric failure
(for example a solver that does not converge without ``--allow-partial``).
Every stochastic subcommand requires ``--seed``; identical arguments give
byte-identical outputs apart from the ``wall_ms`` report column.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bandit, envs, evidence, io, model_vi, pomdp_vi, soft_mdp
from .core_prob import uniform
from .errors import NotConverged, VidmError

STOCHASTIC = {"learn-pomdp", "collect"}
OUTPUT_KEYS = {"out", "policy_out", "report", "obs_out", "quiet"}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--tol", type=float, default=1e-10)
    g.add_argument("--quiet", action="store_true")
    g.add_argument("--allow-partial", action="store_true",
                   help="write best-so-far results instead of failing on non-convergence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True
    parser.subcommands = sub.choices

    p = sub.add_parser("solve-bandit", help="soft contextual bandit (optionally Blahut-Arimoto)")
    p.add_argument("--problem", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--prior", default="uniform", help="uniform or a JSON file with a list")
    p.add_argument("--optimize-prior", action="store_true")
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--policy-out")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("solve-mdp", help="soft backward induction on a finite-horizon MDP")
    p.add_argument("--problem", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--prior", default="uniform")
    p.add_argument("--oracle", action="store_true", help="also run brute-force search and print the gap")
    p.add_argument("--grid-resolution", type=float, default=0.01)
    p.add_argument("--policy-out")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("eval-policy", help="score a given policy under the regularized objective")
    p.add_argument("--problem", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--prior", default="uniform")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("learn-model", help="Dirichlet posterior over transitions")
    p.add_argument("--data", required=True)
    p.add_argument("--prior-conc", default="1", help="scalar or posterior.v1 file")
    p.add_argument("--report")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("predict-states", help="predict state sequences from a posterior")
    p.add_argument("--posterior", required=True)
    p.add_argument("--s0", type=int, required=True)
    p.add_argument("--actions", type=_ints, required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("learn-pomdp", help="mean-field CAVI on observation episodes")
    p.add_argument("--episodes", required=True)
    p.add_argument("--prior-s", default="1", help="scalar or posterior.v1 file (conc)")
    p.add_argument("--prior-o", default="1", help="scalar or posterior.v1 file (conc_obs)")
    p.add_argument("--max-sweeps", type=int, default=1000)
    p.add_argument("--restarts", type=int, default=pomdp_vi.DEFAULT_RESTARTS)
    p.add_argument("--report")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("predict-obs", help="predict observation sequences")
    p.add_argument("--posterior", required=True)
    p.add_argument("--s0", type=int, required=True)
    p.add_argument("--actions", type=_ints, required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("filter", help="plug-in forward filtering")
    p.add_argument("--posterior", required=True)
    p.add_argument("--s0", type=int, required=True)
    p.add_argument("--actions", type=_ints, required=True)
    p.add_argument("--observations", type=_ints, required=True)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("check-evidence", help="exact posterior, ELBO and evidence gap on a grid model")
    p.add_argument("--model", required=True)
    p.add_argument("--q", help="JSON list with a variational distribution (default: the prior)")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("gen-env", help="generate an environment as mdp.v1 JSON")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--gridworld", metavar="SPEC_FILE")
    src.add_argument("--random", type=int, nargs="+", metavar="N", help="S A [O]")
    p.add_argument("--conc", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("collect", help="simulate episodes into dataset.v1 / episode.v1")
    p.add_argument("--env", required=True)
    p.add_argument("--policy", default="uniform")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--obs-out")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("sweep", help="solve a bandit or MDP problem over a list of betas")
    p.add_argument("--problem", required=True)
    p.add_argument("--betas", type=_floats, required=True)
    p.add_argument("--prior", default="uniform")
    p.add_argument("--out", required=True)
    _common(p)
    return parser


def _run_id(args) -> str:
    # identical arguments give the same id, so reruns produce identical files
    payload = {k: v for k, v in sorted(vars(args).items()) if k not in OUTPUT_KEYS}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _problem_id(path) -> str:
    return Path(path).stem


def _prior(spec: str, n: int):
    if spec == "uniform":
        return uniform(n)
    return np.asarray(io.load_json(spec), dtype=float)


def _conc(spec: str, shape, key="conc"):
    try:
        return np.full(shape, float(spec))
    except ValueError:
        d = io.load_json(spec)
        return np.asarray(d[key] if isinstance(d, dict) else d, dtype=float)


class _Ctx:
    def __init__(self, args):
        self.args = args
        self.run_id = _run_id(args)
        self.t0 = time.perf_counter()
        self.seed = args.seed if args.seed is not None else 0

    def record(self, problem_id, beta, iteration, elbo, reward_term, kl_term):
        wall = (time.perf_counter() - self.t0) * 1000.0
        return io.RunRecord(self.run_id, self.args.command, problem_id, beta, iteration,
                            elbo, reward_term, kl_term, wall, self.seed)

    def say(self, msg):
        if not self.args.quiet:
            print(msg)


def _cmd_solve_bandit(ctx: _Ctx):
    a = ctx.args
    prob = io.bandit_from_json(io.load_json(a.problem))
    pid = _problem_id(a.problem)
    if a.optimize_prior:
        try:
            sol = bandit.blahut_arimoto(prob, a.beta, a.tol, a.max_iters)
        except NotConverged as e:
            if not a.allow_partial:
                raise
            sol = e.best
        records = [ctx.record(pid, a.beta, i, *terms) for i, terms in enumerate(sol.trace)]
    else:
        pi0 = _prior(a.prior, prob.n_actions)
        sol = bandit.bandit_elbo(prob, pi0, bandit.soft_policy(prob, pi0, a.beta), a.beta)
        records = [ctx.record(pid, a.beta, 0, sol.objective, sol.reward_term, sol.kl_term)]
    io.write_report(records, a.out)
    if a.policy_out:
        io.dump_json({**io.policy_to_json(sol.policy), "prior": sol.prior}, a.policy_out)
    ctx.say(f"objective {sol.objective:.12g}")


def _cmd_solve_mdp(ctx: _Ctx):
    a = ctx.args
    m = io.mdp_from_json(io.load_json(a.problem))
    pid = _problem_id(a.problem)
    pi0 = _prior(a.prior, m.n_actions)
    sol = soft_mdp.soft_backward_induction(m, pi0, a.beta)
    records = [ctx.record(pid, a.beta, 0, sol.objective, sol.reward_term, sol.kl_term)]
    if a.oracle:
        bf = soft_mdp.brute_force_policy_search(m, pi0, a.beta, a.grid_resolution)
        records.append(ctx.record(pid, a.beta, 1, bf.objective, bf.reward_term, bf.kl_term))
        ctx.say(f"oracle gap {sol.objective - bf.objective:.6g}")
    io.write_report(records, a.out)
    if a.policy_out:
        io.dump_json(io.policy_to_json(sol.policy), a.policy_out)
    ctx.say(f"objective {sol.objective:.12g}")
    if not sol.is_stationary():
        ctx.say(f"policy is time-dependent (max per-step change {sol.stationarity_gap:.3g})")


def _cmd_eval_policy(ctx: _Ctx):
    a = ctx.args
    m = io.mdp_from_json(io.load_json(a.problem))
    pi0 = _prior(a.prior, m.n_actions)
    pol = io.policy_from_json(io.load_json(a.policy))
    sol = soft_mdp.mdp_elbo(m, pi0, pol, a.beta)
    io.write_report([ctx.record(_problem_id(a.problem), a.beta, 0, sol.objective, sol.reward_term,
                                sol.kl_term)], a.out)
    ctx.say(f"objective {sol.objective:.12g}")


def _cmd_learn_model(ctx: _Ctx):
    a = ctx.args
    data = io.dataset_from_json(io.load_json(a.data))
    prior = _conc(a.prior_conc, (data.n_states, data.n_actions, data.n_states))
    q, rep = model_vi.fit_variational(data, prior)
    io.dump_json(io.posterior_to_json(q), a.out)
    if a.report:
        io.write_report([ctx.record(_problem_id(a.data), None, 0, rep.elbo, rep.exp_loglik, rep.kl)],
                        a.report)
    ctx.say(f"elbo {rep.elbo:.12g}")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_sequences(path, result, exact, symbol):
    if exact:
        T = result.ndim
        rows = [list(idx) + [format(float(result[idx]), ".17g")] for idx in np.ndindex(result.shape)]
        _write_rows(path, [f"{symbol}{t + 1}" for t in range(T)] + ["probability"], rows)
    else:
        T = result.shape[1]
        rows = [[i] + list(map(int, r)) for i, r in enumerate(result)]
        _write_rows(path, ["sample"] + [f"{symbol}{t + 1}" for t in range(T)], rows)


def _require_seed(ctx: _Ctx, parser):
    if ctx.args.seed is None:
        parser.error(f"{ctx.args.command}: --seed is required")


def _cmd_predict_states(ctx: _Ctx):
    a = ctx.args
    conc, _ = io.posterior_from_json(io.load_json(a.posterior))
    res = model_vi.predict_states(conc, a.s0, a.actions, a.samples, a.seed, exact=a.exact)
    _write_sequences(a.out, res, a.exact, "s")


def _cmd_learn_pomdp(ctx: _Ctx):
    a = ctx.args
    eps = io.episodes_from_json(io.load_json(a.episodes))
    S, A, O = eps[0].n_states, eps[0].n_actions, eps[0].n_obs
    prior_s = _conc(a.prior_s, (S, A, S), "conc")
    prior_o = _conc(a.prior_o, (S, O), "conc_obs")
    try:
        fit = pomdp_vi.fit_pomdp(eps, prior_s, prior_o, a.tol, a.max_sweeps, a.restarts, a.seed)
    except NotConverged as e:
        if not a.allow_partial:
            raise
        fit = e.best
    io.dump_json(io.posterior_to_json(fit.state.q_trans, fit.state.q_obs), a.out)
    if a.report:
        pid = _problem_id(a.episodes)
        records = [ctx.record(pid, None, r.iteration, r.elbo, r.obs_loglik,
                              r.kl_trans + r.kl_obs - r.state_term) for r in fit.report_trace]
        io.write_report(records, a.report)
    ctx.say(f"elbo {fit.report.elbo:.12g} (restart {fit.restart}, {fit.sweeps} sweeps)")


def _cmd_predict_obs(ctx: _Ctx):
    a = ctx.args
    conc, conc_obs = io.posterior_from_json(io.load_json(a.posterior))
    if conc_obs is None:
        raise UsageError("--posterior has no conc_obs table")
    res = pomdp_vi.predict_observations((conc, conc_obs), a.s0, a.actions, a.samples, a.seed, exact=a.exact)
    _write_sequences(a.out, res, a.exact, "o")


def _cmd_filter(ctx: _Ctx):
    a = ctx.args
    conc, conc_obs = io.posterior_from_json(io.load_json(a.posterior))
    if conc_obs is None:
        raise UsageError("--posterior has no conc_obs table")
    beliefs = pomdp_vi.filter_beliefs((conc, conc_obs), a.s0, a.actions, a.observations, return_all=True)
    rows = [[t] + [format(float(x), ".17g") for x in b] for t, b in enumerate(beliefs)]
    _write_rows(a.out, ["t"] + [f"b{s}" for s in range(beliefs.shape[1])], rows)


def _cmd_check_evidence(ctx: _Ctx):
    a = ctx.args
    m = io.model_from_json(io.load_json(a.model))
    q = np.asarray(io.load_json(a.q), dtype=float) if a.q else m.prior
    post = evidence.exact_posterior(m)
    at_q = evidence.elbo(m, q, a.beta)
    at_post = evidence.elbo(m, post.q, a.beta)
    pid = _problem_id(a.model)
    io.write_report([
        ctx.record(pid, a.beta, 0, at_q.elbo, at_q.exp_loglik, at_q.kl),
        ctx.record(pid, a.beta, 1, at_post.elbo, at_post.exp_loglik, at_post.kl),
    ], a.out)
    ctx.say(f"log evidence {post.log_evidence:.12g}; gap at q {post.log_evidence - at_q.elbo:.6g}")


def _cmd_gen_env(ctx: _Ctx, parser):
    a = ctx.args
    if a.gridworld:
        d = io.load_json(a.gridworld)
        spec = envs.GridworldSpec(
            width=d["width"], height=d["height"], goal=tuple(d["goal"]),
            walls=frozenset(tuple(w) for w in d.get("walls", [])),
            step_reward=d.get("step_reward", 0.0), goal_reward=d.get("goal_reward", 1.0),
            slip_prob=d.get("slip_prob", 0.0),
            start=tuple(d["start"]) if "start" in d else None,
        )
        env = envs.make_gridworld(spec, a.horizon)
    else:
        if len(a.random) not in (2, 3):
            parser.error("--random takes S A [O]")
        _require_seed(ctx, parser)
        n_obs = a.random[2] if len(a.random) == 3 else None
        env = envs.make_random_env(a.random[0], a.random[1], n_obs, a.conc, a.seed, a.horizon)
    io.dump_json(io.env_to_json(env), a.out)


def _cmd_collect(ctx: _Ctx):
    a = ctx.args
    env = io.env_from_json(io.load_json(a.env))
    behavior = uniform(env.mdp.n_actions) if a.policy == "uniform" else io.policy_from_json(io.load_json(a.policy))
    data, eps = envs.collect_transitions(env, behavior, a.episodes, a.horizon, a.seed)
    io.dump_json(io.dataset_to_json(data), a.out)
    if a.obs_out:
        if eps is None:
            raise UsageError("--obs-out needs an environment with an observation channel")
        io.dump_json(io.episodes_to_json(eps), a.obs_out)


def _cmd_sweep(ctx: _Ctx):
    a = ctx.args
    d = io.load_json(a.problem)
    pid = _problem_id(a.problem)
    records = []
    if "p_s" in d:
        prob = io.bandit_from_json(d)
        pi0 = _prior(a.prior, prob.n_actions)
        for i, beta in enumerate(a.betas):
            sol = bandit.bandit_elbo(prob, pi0, bandit.soft_policy(prob, pi0, beta), beta)
            records.append(ctx.record(pid, beta, i, sol.objective, sol.reward_term, sol.kl_term))
    else:
        m = io.mdp_from_json(d)
        pi0 = _prior(a.prior, m.n_actions)
        for i, beta in enumerate(a.betas):
            sol = soft_mdp.soft_backward_induction(m, pi0, beta)
            records.append(ctx.record(pid, beta, i, sol.objective, sol.reward_term, sol.kl_term))
    io.write_report(records, a.out)


def _unknown_flags(parser, argv) -> list[str]:
    """Options the chosen subcommand does not define.

    argparse reports missing required flags before unrecognized ones; this
    lets the diagnostic name the flag that is actually wrong.
    """
    sp = parser.subcommands.get(argv[0])
    if sp is None:
        return []
    known = sp._option_string_actions
    return [tok for tok in argv[1:] if tok.startswith("--") and tok.split("=", 1)[0] not in known]


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    unknown = _unknown_flags(parser, argv)
    if unknown:
        print(f"vidm {argv[0]}: error: unrecognized arguments: {' '.join(unknown)}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    ctx = _Ctx(args)
    try:
        if args.command in STOCHASTIC:
            _require_seed(ctx, parser)
        if args.command in ("predict-states", "predict-obs") and not args.exact:
            _require_seed(ctx, parser)
        handler = {
            "solve-bandit": _cmd_solve_bandit,
            "solve-mdp": _cmd_solve_mdp,
            "eval-policy": _cmd_eval_policy,
            "learn-model": _cmd_learn_model,
            "predict-states": _cmd_predict_states,
            "learn-pomdp": _cmd_learn_pomdp,
            "predict-obs": _cmd_predict_obs,
            "filter": _cmd_filter,
            "check-evidence": _cmd_check_evidence,
            "collect": _cmd_collect,
            "sweep": _cmd_sweep,
        }
        if args.command == "gen-env":
            _cmd_gen_env(ctx, parser)
        else:
            handler[args.command](ctx)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    except UsageError as e:
        print(f"vidm {args.command}: {e}", file=sys.stderr)
        return 2
    except NotConverged as e:
        print(f"vidm {args.command}: {e} (use --allow-partial to keep the best result)", file=sys.stderr)
        return 1
    except (VidmError, ValueError, OSError, KeyError) as e:
        print(f"vidm {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()

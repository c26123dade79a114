"""Command-line interface: ``feasim <subcommand> ...``.

Subcommands::

    gen-demos  expert demonstrations to JSONL
    score      feasibility scores (and demonstrator profiles) to CSV
    imitate    weighted behavioral cloning to a JSON policy
    eval       expected return of a JSON policy
    budget     feasibility-guided vs uniform demo acquisition
    run        full pipeline from a YAML config
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .core import Metric, load_demos, expected_return, save_demos
from .envs import generate_demos, make_env, parse_params, scripted_expert
from .errors import FeasimError
from .feasibility import (
    ScoreConfig,
    build_profiles,
    demonstrator_distribution,
    read_scores_csv,
    transition_sampling_distribution,
    write_profiles_csv,
    write_scores_csv,
)
from .harness import (
    METHODS,
    DemonstratorSpec,
    ExperimentConfig,
    emit_budget_csv,
    emit_csv,
    load_config,
    method_records,
    run_budget_experiment,
    run_experiment,
)
from .imitate import ImitatorPolicy, fit_weighted_bc
from .solver import SolverConfig

log = logging.getLogger("feasim")


def _sigma(text: str):
    return text if text.upper() == "AUTO" else float(text)


def _add_env(p, flag="--params", default=("moveset=I4",), help_text="environment knobs, key=value"):
    p.add_argument("--family", default="grid", help="GRID, POINTMASS or CHAIN")
    p.add_argument(flag, nargs="*", default=list(default), metavar="K=V", help=help_text)


def _add_score(p):
    p.add_argument("--gamma-f", type=float, default=0.9)
    p.add_argument("--sigma", type=_sigma, default="AUTO", help="positive number or AUTO")
    p.add_argument("--c", type=float, default=None, help="explicit shift C (default: best raw reward)")
    p.add_argument("--metric", default="L2", choices=[m.value for m in Metric])
    p.add_argument("--solver", default="q_learning", choices=["q_learning", "value_iteration"])
    p.add_argument("--episodes", type=int, default=50_000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feasim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="generate expert demonstrations")
    _add_env(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--demonstrator-id", type=int, default=0)
    p.add_argument("--first-id", type=int, default=0, help="trajectory_id of the first demo")
    p.add_argument("--tie-break", choices=["random", "lowest"], default="random")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("score", help="score demonstrations against the imitator's dynamics")
    p.add_argument("--demos", type=Path, required=True)
    _add_env(p, "--imitator", help_text="imitator knobs, key=value")
    _add_score(p)
    p.add_argument("--method", choices=["ours", "idfeas"], default="ours")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--profiles", type=Path, default=None, help="also write demonstrator profiles here")

    p = sub.add_parser("imitate", help="fit a weighted behavioral-cloning policy")
    p.add_argument("--demos", type=Path, required=True)
    p.add_argument("--scores", type=Path, default=None, help="scores CSV (ignored for uniform)")
    p.add_argument("--method", choices=list(METHODS), default="ours")
    _add_env(p, "--imitator", help_text="imitator knobs, key=value")
    _add_score(p)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="expected return of a saved policy")
    p.add_argument("--policy", type=Path, required=True)
    _add_env(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    for name, text in (("run", "full pipeline"), ("budget", "budgeted demo acquisition")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--seed", type=int, nargs="*", default=None, help="override the config's seeds")
        p.add_argument("--out-dir", type=Path, default=Path("out"))
        p.add_argument("--workers", type=int, default=None)
        if name == "budget":
            p.add_argument("--initial", type=int, default=1, help="initial demos per demonstrator")
            p.add_argument("--steps", type=int, nargs="*", default=[20], help="demos acquired at each step")
        else:
            p.add_argument("--methods", nargs="+", choices=list(METHODS), default=None)
    return parser


def _score_config(args) -> ScoreConfig:
    return ScoreConfig(gamma_f=args.gamma_f, sigma=args.sigma, c=args.c, metric=Metric(args.metric))


def _adhoc_config(args, demos, seed) -> ExperimentConfig:
    """Experiment config covering an ad hoc demo file (scoring/imitation subcommands)."""
    imitator = parse_params(args.imitator)
    dids = sorted({xi.demonstrator_id for xi in demos})
    return ExperimentConfig(
        demonstrators=tuple(DemonstratorSpec(d, dict(imitator), 0) for d in dids),
        family=args.family,
        imitator_params=imitator,
        score=_score_config(args),
        solver=SolverConfig(episodes=args.episodes),
        solver_kind=args.solver,
        seeds=(seed,),
    )


def cmd_gen_demos(args) -> int:
    env = make_env(args.family, parse_params(args.params))
    demos = generate_demos(
        env, scripted_expert(env), args.n, args.seed,
        demonstrator_id=args.demonstrator_id, first_trajectory_id=args.first_id, tie_break=args.tie_break,
    )
    save_demos(demos, args.out)
    print(f"wrote {len(demos)} demos to {args.out}")
    return 0


def cmd_score(args) -> int:
    demos = load_demos(args.demos)
    cfg = _adhoc_config(args, demos, args.seed)
    records = method_records(args.method, demos, cfg, args.seed)
    write_scores_csv(args.out, records, transition_sampling_distribution(demos, records))
    if args.profiles:
        write_profiles_csv(args.profiles, demonstrator_distribution(build_profiles(demos, records)))
    print(f"scored {len(records)} demos -> {args.out}")
    return 0


def cmd_imitate(args) -> int:
    demos = load_demos(args.demos)
    cfg = _adhoc_config(args, demos, args.seed)
    if args.method != "uniform" and args.scores is not None:
        records = read_scores_csv(args.scores)
    else:
        records = method_records(args.method, demos, cfg, args.seed)
    env = cfg.imitator_env()
    weighted = transition_sampling_distribution(demos, records)
    policy = fit_weighted_bc(weighted, env, args.batch, args.iters, args.seed, cfg.score.metric)
    policy.save(args.out)
    print(f"policy over {len(policy.lookup)} states -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    env = make_env(args.family, parse_params(args.params))
    policy = ImitatorPolicy.load(args.policy)
    mean, std = expected_return(env, policy, args.n, args.seed)
    print(f"mean_return={mean!r} std_return={std!r}")
    return 0


def _load_run_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if args.workers is not None:
        overrides["workers"] = args.workers
    if getattr(args, "methods", None):
        overrides["methods"] = tuple(args.methods)
    return replace(cfg, **overrides) if overrides else cfg


def cmd_run(args) -> int:
    cfg = _load_run_config(args)
    report = run_experiment(cfg)
    paths = emit_csv(report, args.out_dir / "results.csv")
    for method in cfg.methods:
        mean, std = report.summary(method)
        print(f"{method:8s} mean_return={mean:.4f} std={std:.4f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def cmd_budget(args) -> int:
    cfg = _load_run_config(args)
    report = run_budget_experiment(cfg, args.initial, args.steps)
    path = emit_budget_csv(report, args.out_dir / "budget.csv")
    print(f"wrote {path}")
    return 0


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "score": cmd_score,
    "imitate": cmd_imitate,
    "eval": cmd_eval,
    "run": cmd_run,
    "budget": cmd_budget,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FeasimError as exc:
        print(f"feasim: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"feasim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end experiment pipeline, budgeted acquisition and CSV reports.

A run, for each seed:

1. generates every demonstrator's demos with that demonstrator's expert,
2. builds one trajectory f-MDP per demonstrator on the imitator's dynamics,
   solves it and scores the demonstrator's demos,
3. fits a weighted behavioral-cloning policy per imitation method,
4. evaluates each policy with ``eval_rollouts`` rollouts.

All randomness comes from streams derived from ``(seed, stage tag)`` so
adding a stage never shifts the draws of another.

Configuration files are YAML::

    name: grid5-polluted
    family: grid
    imitator: {moveset: I4}
    demonstrators:
      - {id: 0, params: {moveset: I4}, n_demos: 10}
      - {id: 1, params: {moveset: DJ}, n_demos: 100}
    score: {gamma_f: 0.9, sigma: AUTO, c: null, metric: L2}
    solver: {kind: q_learning, episodes: 50000, learning_rate: 0.1,
             epsilon_start: 1.0, epsilon_end: 0.05}
    imitation: {methods: [ours, idfeas, uniform], batch: 64, iters: 50}
    eval: {rollouts: 100}
    seeds: [0, 1, 2, 3, 4]
    demo_tie_break: random
    workers: 1
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .core import Environment, Metric, Trajectory, derive_seed, expected_return, make_rng
from .envs import generate_demos, make_env, scripted_expert
from .errors import ConfigError, FeasimError, StageError
from .feasibility import (
    AUTO,
    FeasibilityRecord,
    ScoreConfig,
    budget_sample,
    build_profiles,
    demonstrator_distribution,
    feasibility,
    score_trajectory,
    transition_sampling_distribution,
)
from .fmdp import build_trajectory_fmdp
from .imitate import fit_weighted_bc, id_feas_raw_reward, uniform_records
from .solver import SolverConfig, q_learning, value_iteration

log = logging.getLogger(__name__)

METHODS = ("ours", "idfeas", "uniform")
SOLVERS = ("q_learning", "value_iteration")
ID_STRIDE = 100_000  # trajectory_id = demonstrator_id * ID_STRIDE + per-demonstrator index


@dataclass(frozen=True)
class DemonstratorSpec:
    demonstrator_id: int
    params: dict = field(default_factory=dict)
    n_demos: int = 10

    def __post_init__(self):
        if self.n_demos < 0:
            raise ConfigError(f"demonstrator {self.demonstrator_id}: n_demos must be >= 0")
        if not 0 <= self.demonstrator_id < 2**31 // ID_STRIDE:
            raise ConfigError(f"demonstrator id {self.demonstrator_id} out of range")


@dataclass(frozen=True)
class ExperimentConfig:
    demonstrators: tuple[DemonstratorSpec, ...]
    family: str = "GRID"
    imitator_params: dict = field(default_factory=lambda: {"moveset": "I4"})
    score: ScoreConfig = ScoreConfig()
    solver: SolverConfig = SolverConfig()
    solver_kind: str = "q_learning"
    methods: tuple[str, ...] = METHODS
    bc_batch: int = 64
    bc_iters: int = 50
    eval_rollouts: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    demo_tie_break: str = "random"
    name: str = ""
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "demonstrators", tuple(self.demonstrators))
        object.__setattr__(self, "methods", tuple(m.lower() for m in self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "family", self.family.upper())
        if not self.demonstrators:
            raise ConfigError("at least one demonstrator is required")
        ids = [d.demonstrator_id for d in self.demonstrators]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate demonstrator ids {ids}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be drawn from {METHODS}, got {self.methods}")
        if self.solver_kind not in SOLVERS:
            raise ConfigError(f"solver kind must be one of {SOLVERS}")
        if self.eval_rollouts < 1 or self.bc_batch < 1 or self.bc_iters < 1:
            raise ConfigError("eval rollouts, batch and iters must be positive")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # fail early on bad env knobs
        make_env(self.family, self.imitator_params)
        for d in self.demonstrators:
            make_env(self.family, d.params)

    @property
    def env_label(self) -> str:
        if self.name:
            return self.name
        knobs = ",".join(f"{k}={v}" for k, v in sorted(self.imitator_params.items()))
        return f"{self.family}[{knobs}]"

    def imitator_env(self) -> Environment:
        return make_env(self.family, self.imitator_params)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    # -- (de)serialization ----------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw or {})
        known = {"name", "family", "imitator", "demonstrators", "score", "solver", "imitation", "eval",
                 "seeds", "demo_tie_break", "workers"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            demos = tuple(
                DemonstratorSpec(int(d["id"]), dict(d.get("params") or {}), int(d.get("n_demos", 10)))
                for d in raw.get("demonstrators") or ()
            )
            score_raw = dict(raw.get("score") or {})
            score = ScoreConfig(
                gamma_f=float(score_raw.get("gamma_f", 0.9)),
                sigma=_sigma(score_raw.get("sigma", AUTO)),
                c=None if score_raw.get("c") is None else float(score_raw["c"]),
                mc_rollouts=int(score_raw.get("mc_rollouts", 100)),
                metric=Metric.parse(score_raw.get("metric", "L2")),
            )
            solver_raw = dict(raw.get("solver") or {})
            kind = solver_raw.pop("kind", "q_learning")
            solver = SolverConfig(**solver_raw)
            imit = dict(raw.get("imitation") or {})
            ev = dict(raw.get("eval") or {})
            return cls(
                demonstrators=demos,
                family=str(raw.get("family", "GRID")),
                imitator_params=dict(raw.get("imitator") or {}),
                score=score,
                solver=solver,
                solver_kind=kind,
                methods=tuple(imit.get("methods", METHODS)),
                bc_batch=int(imit.get("batch", 64)),
                bc_iters=int(imit.get("iters", 50)),
                eval_rollouts=int(ev.get("rollouts", 100)),
                seeds=tuple(raw.get("seeds", (0, 1, 2, 3, 4))),
                demo_tie_break=str(raw.get("demo_tie_break", "random")),
                name=str(raw.get("name", "")),
                workers=int(raw.get("workers", 1)),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    def to_dict(self) -> dict:
        solver = asdict(self.solver)
        return {
            "name": self.name,
            "family": self.family,
            "imitator": dict(self.imitator_params),
            "demonstrators": [
                {"id": d.demonstrator_id, "params": dict(d.params), "n_demos": d.n_demos} for d in self.demonstrators
            ],
            "score": {
                "gamma_f": self.score.gamma_f,
                "sigma": self.score.sigma,
                "c": self.score.c,
                "mc_rollouts": self.score.mc_rollouts,
                "metric": self.score.metric.value,
            },
            "solver": {"kind": self.solver_kind, **solver},
            "imitation": {"methods": list(self.methods), "batch": self.bc_batch, "iters": self.bc_iters},
            "eval": {"rollouts": self.eval_rollouts},
            "seeds": list(self.seeds),
            "demo_tie_break": self.demo_tie_break,
            "workers": self.workers,
        }


def _sigma(value):
    if isinstance(value, str):
        return value
    return float(value)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return ExperimentConfig.from_dict(raw)


# -- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class SeedResult:
    seed: int
    method: str
    env: str
    mean_return: float
    std_return: float


@dataclass(frozen=True)
class ScoreRow:
    seed: int
    method: str
    trajectory_id: int
    demonstrator_id: int
    raw_reward: float
    w: float
    p_w: float


@dataclass(frozen=True)
class ProfileRow:
    seed: int
    method: str
    demonstrator_id: int
    n_demos: int
    mean_feasibility: float
    p_j: float


@dataclass
class RunReport:
    results: list[SeedResult] = field(default_factory=list)
    scores: list[ScoreRow] = field(default_factory=list)
    profiles: list[ProfileRow] = field(default_factory=list)

    def returns(self, method: str) -> list[float]:
        """Per-seed mean returns of ``method``, ordered by seed."""
        rows = sorted((r for r in self.results if r.method == method), key=lambda r: r.seed)
        return [r.mean_return for r in rows]

    def summary(self, method: str) -> tuple[float, float]:
        """Mean and population std over seeds of the per-seed returns."""
        vals = self.returns(method)
        if not vals:
            raise KeyError(method)
        return float(statistics.mean(vals)), float(statistics.pstdev(vals))

    def mean_feasibility(self, method: str = "ours") -> dict[int, float]:
        """Per-demonstrator mean feasibility, averaged over seeds."""
        acc: dict[int, list[float]] = {}
        for p in self.profiles:
            if p.method == method:
                acc.setdefault(p.demonstrator_id, []).append(p.mean_feasibility)
        return {did: math.fsum(v) / len(v) for did, v in sorted(acc.items())}

    def merge(self, other: "RunReport") -> None:
        self.results.extend(other.results)
        self.scores.extend(other.scores)
        self.profiles.extend(other.profiles)


# -- stages -------------------------------------------------------------------


def demo_digest(demos: Sequence[Trajectory]) -> str:
    h = hashlib.sha256()
    for xi in demos:
        h.update(json.dumps(xi.to_json(), sort_keys=True).encode())
    return h.hexdigest()


class ScoreCache:
    """Raw rewards keyed by (demo-set digest, imitator, score/solver config, method)."""

    def __init__(self):
        self._store: dict = {}
        self.hits = 0
        self.misses = 0

    def get_or_compute(self, key, compute):
        if key in self._store:
            self.hits += 1
        else:
            self.misses += 1
            self._store[key] = compute()
        return self._store[key]

    def __len__(self):
        return len(self._store)


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (FeasimError, ValueError, KeyError, OSError) as exc:
        raise StageError(name, exc) from exc


def generate_corpus(config: ExperimentConfig, seed: int, counts: dict[int, int] | None = None,
                    start: dict[int, int] | None = None) -> list[Trajectory]:
    """Demos of every demonstrator for ``seed``.

    Each demonstrator has its own stream; demo ``i`` of demonstrator ``j``
    is the same regardless of how many demos the other demonstrators
    contribute, and ``start`` continues a stream where an earlier call left off.
    """
    out = []
    for spec in config.demonstrators:
        n = spec.n_demos if counts is None else counts.get(spec.demonstrator_id, 0)
        if n == 0:
            continue
        first = 0 if start is None else start.get(spec.demonstrator_id, 0)
        env = make_env(config.family, spec.params)
        out.extend(
            generate_demos(
                env,
                scripted_expert(env),
                n,
                derive_seed(seed, "demos", spec.demonstrator_id),
                demonstrator_id=spec.demonstrator_id,
                first_trajectory_id=spec.demonstrator_id * ID_STRIDE + first,
                start_index=first,
                tie_break=config.demo_tie_break,
            )
        )
    return out


def _solve(fmdp, config: ExperimentConfig, seed: int, did: int):
    if config.solver_kind == "value_iteration":
        return value_iteration(fmdp, config.solver.vi_tolerance, config.solver.max_states)[0]
    return q_learning(fmdp, replace(config.solver, seed=derive_seed(seed, "solver", did) % 2**32))


def ours_raw_rewards(demos: Sequence[Trajectory], config: ExperimentConfig, seed: int,
                     cache: ScoreCache | None = None) -> dict[int, float]:
    """Raw rewards from one solved trajectory f-MDP per demonstrator."""
    env = config.imitator_env()
    groups: dict[int, list[Trajectory]] = {}
    for xi in demos:
        groups.setdefault(xi.demonstrator_id, []).append(xi)
    raws: dict[int, float] = {}
    for did in sorted(groups):
        group = groups[did]

        def compute(group=group, did=did):
            fmdp = build_trajectory_fmdp(group, env, config.score.metric, config.score.gamma_f)
            policy = _solve(fmdp, config, seed, did)
            return {xi.trajectory_id: score_trajectory(policy, fmdp, xi) for xi in group}

        if cache is None:
            part = compute()
        else:
            solver_key = (config.solver_kind, config.solver) if config.solver_kind == "q_learning" else ("vi",)
            seed_key = derive_seed(seed, "solver", did) if config.solver_kind == "q_learning" else None
            key = ("ours", demo_digest(group), config.family, _frozen(config.imitator_params),
                   config.score, solver_key, seed_key)
            part = cache.get_or_compute(key, compute)
        raws.update(part)
    return {xi.trajectory_id: raws[xi.trajectory_id] for xi in demos}


def _frozen(d: dict):
    return tuple(sorted((k, str(v)) for k, v in d.items()))


def idfeas_raw_rewards(demos: Sequence[Trajectory], config: ExperimentConfig) -> dict[int, float]:
    env = config.imitator_env()
    return {xi.trajectory_id: id_feas_raw_reward(xi, env, config.score.metric, config.score.gamma_f) for xi in demos}


def method_records(method: str, demos: Sequence[Trajectory], config: ExperimentConfig, seed: int,
                   cache: ScoreCache | None = None) -> list[FeasibilityRecord]:
    dids = {xi.trajectory_id: xi.demonstrator_id for xi in demos}
    if method == "uniform":
        return uniform_records(demos)
    if method == "ours":
        raws = _stage("score", ours_raw_rewards, demos, config, seed, cache)
    else:
        raws = _stage("score", idfeas_raw_rewards, demos, config)
    return _stage("feasibility", feasibility, raws, config.score, dids)


def fit_and_evaluate(method: str, demos: Sequence[Trajectory], records, config: ExperimentConfig, seed: int):
    env = config.imitator_env()
    weighted = _stage("weights", transition_sampling_distribution, demos, records)
    policy = _stage(
        "imitate", fit_weighted_bc, weighted, env, config.bc_batch, config.bc_iters,
        make_rng(seed, "bc"), config.score.metric,
    )
    mean, std = _stage("eval", expected_return, env, policy, config.eval_rollouts, derive_seed(seed, "eval"))
    return policy, weighted, mean, std


def run_seed(config: ExperimentConfig, seed: int, cache: ScoreCache | None = None) -> RunReport:
    """One seed of the pipeline for every configured method."""
    cache = ScoreCache() if cache is None else cache
    demos = _stage("gen-demos", generate_corpus, config, seed)
    if not demos:
        raise StageError("gen-demos", ConfigError("every demonstrator has n_demos = 0"))
    report = RunReport()
    for method in config.methods:
        records = method_records(method, demos, config, seed, cache)
        _, weighted, mean, std = fit_and_evaluate(method, demos, records, config, seed)
        log.info("seed %d %s: return %.4f", seed, method, mean)
        report.results.append(SeedResult(seed, method, config.env_label, mean, std))
        p_w = weighted.per_trajectory()
        for r in records:
            report.scores.append(
                ScoreRow(seed, method, r.trajectory_id, r.demonstrator_id, r.raw_reward, r.weight, p_w[r.trajectory_id])
            )
        for prof in demonstrator_distribution(build_profiles(demos, records)):
            report.profiles.append(
                ProfileRow(seed, method, prof.demonstrator_id, len(prof.demos), prof.mean_feasibility, prof.p_j)
            )
    return report


def run_experiment(config: ExperimentConfig, cache: ScoreCache | None = None) -> RunReport:
    """Run every seed of ``config``; seeds run in worker processes when ``config.workers > 1``."""
    report = RunReport()
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(config.seeds))) as pool:
            parts = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds))
    else:
        cache = ScoreCache() if cache is None else cache
        parts = [run_seed(config, seed, cache) for seed in config.seeds]
    for part in parts:
        report.merge(part)
    return report


# -- budgeted acquisition ----------------------------------------------------

ACQUISITION = ("feasibility", "uniform")


@dataclass(frozen=True)
class BudgetRow:
    seed: int
    strategy: str
    step: int
    demonstrator_id: int
    n_demos: int
    p_j: float
    mean_return: float


@dataclass
class BudgetReport:
    rows: list[BudgetRow] = field(default_factory=list)

    def counts(self, strategy: str, seed: int, step: int) -> dict[int, int]:
        return {
            r.demonstrator_id: r.n_demos
            for r in self.rows
            if r.strategy == strategy and r.seed == seed and r.step == step
        }

    def steps(self) -> list[int]:
        return sorted({r.step for r in self.rows})


def run_budget_experiment(
    config: ExperimentConfig,
    initial_per_demonstrator: int,
    budget_steps: Sequence[int],
    method: str = "ours",
) -> BudgetReport:
    """Feasibility-guided demo acquisition next to the uniform-acquisition ablation.

    Both strategies start from ``initial_per_demonstrator`` demos of every
    demonstrator.  At each step the current corpus is scored, ``p_j`` is
    computed, the imitator is retrained and evaluated, and then
    ``budget_steps[k]`` new demos are requested: by ``p_j`` for the guided
    strategy, uniformly over demonstrators for the ablation.
    """
    if initial_per_demonstrator < 1:
        raise ConfigError("initial_per_demonstrator must be >= 1")
    if any(b < 0 for b in budget_steps):
        raise ConfigError("budget steps must be >= 0")
    report = BudgetReport()
    cache = ScoreCache()
    dids = [d.demonstrator_id for d in config.demonstrators]
    for seed in config.seeds:
        for strategy in ACQUISITION:
            counts = {did: initial_per_demonstrator for did in dids}
            demos = generate_corpus(config, seed, counts)
            for k in range(len(budget_steps) + 1):
                records = method_records(method, demos, config, seed, cache)
                profiles = demonstrator_distribution(build_profiles(demos, records))
                _, _, mean, _ = fit_and_evaluate(method, demos, records, config, seed)
                for prof in profiles:
                    report.rows.append(
                        BudgetRow(seed, strategy, k, prof.demonstrator_id, counts[prof.demonstrator_id], prof.p_j, mean)
                    )
                if k == len(budget_steps):
                    break
                if strategy == "uniform":
                    profiles = [replace(p, p_j=1.0 / len(profiles)) for p in profiles]
                draws = budget_sample(profiles, budget_steps[k], make_rng(seed, "budget", strategy, k))
                new = _stage("gen-demos", generate_corpus, config, seed, draws, counts)
                demos = demos + new
                counts = {did: counts[did] + draws.get(did, 0) for did in dids}
    return report


# -- CSV ----------------------------------------------------------------------

RESULT_COLUMNS = ["seed", "method", "env", "mean_return", "std_return"]
SCORE_COLUMNS = ["seed", "method", "trajectory_id", "demonstrator_id", "raw_reward", "w", "p_w"]
PROFILE_COLUMNS = ["seed", "method", "demonstrator_id", "n_demos", "mean_feasibility", "p_j"]
BUDGET_COLUMNS = ["seed", "strategy", "step", "demonstrator_id", "n_demos", "p_j", "mean_return"]


def _fmt(v: Any) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write(path: Path, columns: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(getattr(row, c)) for c in columns])
    return path


def _method_rank(method: str) -> int:
    return METHODS.index(method) if method in METHODS else len(METHODS)


def emit_csv(report: RunReport, path: str | Path) -> list[Path]:
    """Write results to ``path`` plus ``<stem>_scores.csv`` and ``<stem>_profiles.csv`` beside it."""
    path = Path(path)
    results = sorted(report.results, key=lambda r: (r.seed, _method_rank(r.method), r.env))
    scores = sorted(report.scores, key=lambda r: (r.seed, _method_rank(r.method), r.trajectory_id))
    profiles = sorted(report.profiles, key=lambda r: (r.seed, _method_rank(r.method), r.demonstrator_id))
    return [
        _write(path, RESULT_COLUMNS, results),
        _write(path.with_name(path.stem + "_scores.csv"), SCORE_COLUMNS, scores),
        _write(path.with_name(path.stem + "_profiles.csv"), PROFILE_COLUMNS, profiles),
    ]


def emit_budget_csv(report: BudgetReport, path: str | Path) -> Path:
    rows = sorted(report.rows, key=lambda r: (r.seed, ACQUISITION.index(r.strategy), r.step, r.demonstrator_id))
    return _write(Path(path), BUDGET_COLUMNS, rows)

"""Weighted behavioral cloning from state-only transitions, plus baselines.

Actions are recovered exactly for finite action sets by trying every
imitator action and keeping the one whose successor lands closest to the
demonstrated next state.  The imitator policy stores, for every former
state, the action voted most often by transitions sampled from ``p_w``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Environment, Metric, Trajectory, distance
from .errors import DegenerateDistributionError, EmptyInputError
from .feasibility import (
    FeasibilityRecord,
    ScoreConfig,
    WeightedTransitionSet,
    feasibility,
    transition_sampling_distribution,
)
from .solver import decode_state, encode_state


@dataclass(frozen=True)
class RecoveredTransition:
    s: tuple
    target: tuple
    best_action: int
    achieved: tuple
    residual: float


def recover_action(env: Environment, s, target, metric=Metric.L2) -> RecoveredTransition:
    """Exhaustive inverse dynamics: the action whose successor is closest to ``target``."""
    best = None
    for a in range(env.n_actions):
        s2 = env.transition(s, a)
        d = distance(metric, s2, target)
        if best is None or d < best[0]:
            best = (d, a, s2)
    d, a, s2 = best
    return RecoveredTransition(s, target, a, s2, d)


class ImitatorPolicy:
    """Lookup table with a nearest-stored-state fallback.

    Unseen query states use the action of the closest stored state under
    ``metric``; distance ties go to the lexicographically smallest state.
    """

    def __init__(self, lookup: dict, metric=Metric.L2):
        if not lookup:
            raise EmptyInputError("imitator policy needs at least one stored state")
        self.lookup = dict(lookup)
        self.metric = Metric.parse(metric)
        self._stored = sorted(self.lookup)
        self._fallback: dict = {}

    def nearest(self, s):
        hit = self._fallback.get(s)
        if hit is None:
            hit = min(self._stored, key=lambda k: (distance(self.metric, s, k), k))
            self._fallback[s] = hit
        return hit

    def __call__(self, s) -> int:
        a = self.lookup.get(s)
        if a is None:
            a = self.lookup[self.nearest(s)]
        return a

    def __eq__(self, other):
        return isinstance(other, ImitatorPolicy) and self.lookup == other.lookup and self.metric == other.metric

    def to_json(self) -> dict:
        table = {encode_state(s): int(a) for s, a in self.lookup.items()}
        return {"kind": "imitator", "metric": self.metric.value, "table": dict(sorted(table.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "ImitatorPolicy":
        return cls({decode_state(k): int(a) for k, a in obj["table"].items()}, obj.get("metric", "L2"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ImitatorPolicy":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_weighted_bc(
    weighted: WeightedTransitionSet,
    env: Environment,
    batch: int = 64,
    iters: int = 50,
    seed=0,
    metric=Metric.L2,
) -> ImitatorPolicy:
    """Sample ``iters`` batches from ``p_w`` and keep each state's majority recovered action."""
    p = np.asarray(weighted.p_w, dtype=float)
    if len(weighted) == 0 or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise DegenerateDistributionError("p_w is not a probability distribution")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    recovered: dict = {}
    votes: dict = {}
    for _ in range(iters):
        for i in rng.choice(len(weighted), size=batch, p=p):
            e = weighted.entries[i]
            key = (e.source, e.target)
            a = recovered.get(key)
            if a is None:
                a = recovered[key] = recover_action(env, e.source, e.target, metric).best_action
            counts = votes.setdefault(e.source, [0] * env.n_actions)
            counts[a] += 1
    lookup = {s: int(np.argmax(c)) for s, c in votes.items()}  # argmax returns the lowest index on ties
    return ImitatorPolicy(lookup, metric)


def uniform_records(demos: Sequence[Trajectory]) -> list[FeasibilityRecord]:
    return [FeasibilityRecord(xi.trajectory_id, 0.0, 0.0, 1.0, xi.demonstrator_id) for xi in demos]


def uniform_weights(demos: Sequence[Trajectory]) -> WeightedTransitionSet:
    """Every trajectory weighted 1: the all-demos-are-useful baseline."""
    return transition_sampling_distribution(demos, uniform_records(demos))


def id_feas_raw_reward(xi: Trajectory, env: Environment, metric=Metric.L2, gamma_f: float = 0.9) -> float:
    """Greedy inverse-dynamics replay of ``xi``: each achieved state feeds the next recovery."""
    s = xi.states[0]
    total = []
    for t in range(1, len(xi)):
        s = recover_action(env, s, xi.states[t], metric).achieved
        total.append(gamma_f**t * distance(metric, s, xi.states[t]))
    return -math.fsum(total)


def id_feas_records(demos: Sequence[Trajectory], env: Environment, config: ScoreConfig = ScoreConfig()):
    raws = {xi.trajectory_id: id_feas_raw_reward(xi, env, config.metric, config.gamma_f) for xi in demos}
    return feasibility(raws, config, {xi.trajectory_id: xi.demonstrator_id for xi in demos})


def id_feas_weights(
    demos: Sequence[Trajectory], env: Environment, metric=None, config: ScoreConfig = ScoreConfig()
) -> WeightedTransitionSet:
    if metric is not None and Metric.parse(metric) is not config.metric:
        config = ScoreConfig(config.gamma_f, config.sigma, config.c, config.mc_rollouts, Metric.parse(metric))
    return transition_sampling_distribution(demos, id_feas_records(demos, env, config))

"""Feasibility scores, transition/demonstrator sampling distributions, budgets.

A demonstration's raw reward is the discounted tracking error of the
f-MDP's optimal policy,

    raw = -sum_{t=1..H} gamma_f**t * dist(s_t, s_t^d),

and its feasibility weight is ``w = exp((raw - C) / sigma)``.  With
``C = max raw`` (the default) the best demonstration gets ``w = 1``.
All transitions of a trajectory share its weight.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Environment, Metric, Trajectory, distance, simulate
from .errors import ConfigError, DegenerateDistributionError, EmptyInputError, UnknownTrajectoryError
from .fmdp import FMdp, Variant

AUTO = "AUTO"
AUTO_FLOOR_WEIGHT = 0.01
RAW_SLACK = 1e-12


@dataclass(frozen=True)
class ScoreConfig:
    """``c=None`` shifts by the best raw reward; a number is used as-is.

    ``sigma="AUTO"`` picks ``(C - min raw) / ln(100)`` so the worst
    demonstration lands at ``w = 0.01`` (``sigma = 1`` if all raws tie).
    """

    gamma_f: float = 0.9
    sigma: float | str = AUTO
    c: float | None = None
    mc_rollouts: int = 100
    metric: Metric = Metric.L2

    def __post_init__(self):
        if not 0.0 < self.gamma_f <= 1.0:
            raise ConfigError(f"gamma_f must lie in (0, 1], got {self.gamma_f}")
        if isinstance(self.sigma, str):
            if self.sigma.upper() != AUTO:
                raise ConfigError(f"sigma must be positive or 'AUTO', got {self.sigma!r}")
            object.__setattr__(self, "sigma", AUTO)
        elif not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.mc_rollouts < 1:
            raise ConfigError("mc_rollouts must be >= 1")
        object.__setattr__(self, "metric", Metric.parse(self.metric))

    @property
    def c_mode(self) -> str:
        return "MAX_OVER_DEMOS" if self.c is None else "EXPLICIT"


@dataclass(frozen=True)
class FeasibilityRecord:
    trajectory_id: int
    raw_reward: float
    shifted_reward: float
    weight: float
    demonstrator_id: int | None = None


# -- scoring ------------------------------------------------------------------


def _check_tracked(fmdp: FMdp, xi: Trajectory):
    if fmdp.variant is not Variant.TRAJECTORY:
        raise ConfigError("scores come from a trajectory f-MDP")
    return fmdp.start_state(xi)


def tracking_error(fmdp: FMdp, xi: Trajectory, states) -> float:
    """``-sum_{t>=1} gamma_f**t * dist(s_t, s_t^d)`` for an f-MDP state sequence."""
    g = fmdp.gamma_f
    return -math.fsum(g**t * distance(fmdp.metric, x.state, xi.states[t]) for t, x in enumerate(states) if t > 0)


def score_trajectory(policy, fmdp: FMdp, xi: Trajectory) -> float:
    """Raw feasibility reward of ``xi`` under the (greedy) f-MDP policy."""
    start = _check_tracked(fmdp, xi)
    ep = simulate(fmdp, policy, start, len(xi) - 1)
    return tracking_error(fmdp, xi, ep.states)


def score_demos(policy, fmdp: FMdp, demos: Iterable[Trajectory]) -> dict[int, float]:
    return {xi.trajectory_id: score_trajectory(policy, fmdp, xi) for xi in demos}


def resolve_shift_and_scale(raws: Sequence[float], config: ScoreConfig) -> tuple[float, float]:
    best = max(raws)
    c = best if config.c is None else float(config.c)
    if c < best - RAW_SLACK:
        raise ConfigError(f"explicit C={c} is below the best raw reward {best}; weights would exceed 1")
    if config.sigma == AUTO:
        spread = c - min(raws)
        sigma = spread / math.log(1.0 / AUTO_FLOOR_WEIGHT) if spread > 0 else 1.0
    else:
        sigma = float(config.sigma)
    return c, sigma


def feasibility(
    raw_rewards: Mapping[int, float],
    config: ScoreConfig = ScoreConfig(),
    demonstrator_ids: Mapping[int, int] | None = None,
) -> list[FeasibilityRecord]:
    """Turn per-trajectory raw rewards into feasibility records (input order kept)."""
    if not raw_rewards:
        raise EmptyInputError("no raw rewards to score")
    raws = list(raw_rewards.values())
    if max(raws) > RAW_SLACK:
        raise ConfigError(f"raw rewards must be <= 0, got {max(raws)}")
    c, sigma = resolve_shift_and_scale(raws, config)
    demonstrator_ids = demonstrator_ids or {}
    out = []
    for tid, raw in raw_rewards.items():
        shifted = min(raw - c, 0.0)
        out.append(FeasibilityRecord(tid, raw, shifted, math.exp(shifted / sigma), demonstrator_ids.get(tid)))
    return out


# -- stochastic imitators -----------------------------------------------------


class NoisyActionEnv(Environment):
    """Stochastic wrapper: with probability ``flip_prob`` the executed action
    is replaced by one of the other actions, drawn uniformly.

    ``transition`` keeps the nominal (noise-free) dynamics so the wrapper
    still satisfies the deterministic core interface; the noise is exposed
    through :meth:`outcomes` and :meth:`sample_transition`.
    """

    def __init__(self, base: Environment, flip_prob: float = 0.1):
        if not 0.0 <= flip_prob <= 1.0:
            raise ConfigError("flip_prob must lie in [0, 1]")
        if base.n_actions < 2 and flip_prob > 0:
            raise ConfigError("action flips need at least two actions")
        super().__init__(
            base.state_dim, base.actions, base.initial_states, base.gamma, base.horizon,
            {**base.params, "flip_prob": flip_prob},
        )
        self.base = base
        self.flip_prob = flip_prob
        self.family = base.family

    def transition(self, s, a):
        return self.base.transition(s, a)

    def reward(self, s, a, s_next):
        return self.base.reward(s, a, s_next)

    def is_terminal(self, s):
        return self.base.is_terminal(s)

    def validate_state(self, s):
        self.base.validate_state(s)

    def outcomes(self, s, a):
        probs: dict = {}
        na, p = self.n_actions, self.flip_prob
        for b in range(na):
            pb = 1.0 - p if b == a else p / (na - 1)
            if pb > 0:
                s2 = self.base.transition(s, b)
                probs[s2] = probs.get(s2, 0.0) + pb
        return list((pr, s2) for s2, pr in probs.items())

    def sample_transition(self, s, a, rng):
        if self.flip_prob > 0 and rng.random() < self.flip_prob:
            b = int(rng.integers(self.n_actions - 1))
            a = b if b < a else b + 1
        return self.base.transition(s, a)


def mc_raw_reward(policy, fmdp: FMdp, xi: Trajectory, m: int, rng) -> float:
    """Average tracking error over ``m`` sampled rollouts of ``policy``."""
    if m < 1:
        raise ConfigError("need at least one Monte Carlo rollout")
    start = _check_tracked(fmdp, xi)
    total = []
    for _ in range(m):
        x, states = start, [start]
        while not fmdp.is_terminal(x):
            x = fmdp.sample_transition(x, policy(x), rng)
            states.append(x)
        total.append(tracking_error(fmdp, xi, states))
    return math.fsum(total) / m


def feasibility_stochastic(policy, fmdp: FMdp, xi: Trajectory, config: ScoreConfig, seed=0) -> FeasibilityRecord:
    """Monte Carlo feasibility record of one trajectory (``config.mc_rollouts`` rollouts).

    The shift/scale follow ``config`` applied to this single trajectory, so
    with the default ``C`` the weight is 1; pass an explicit ``c`` to
    compare across trajectories.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    raw = mc_raw_reward(policy, fmdp, xi, config.mc_rollouts, rng)
    return feasibility({xi.trajectory_id: raw}, config, {xi.trajectory_id: xi.demonstrator_id})[0]


# -- sampling distributions ---------------------------------------------------


@dataclass(frozen=True)
class WeightedTransition:
    source: tuple
    target: tuple
    trajectory_id: int
    step_index: int
    weight: float


@dataclass
class WeightedTransitionSet:
    entries: list[WeightedTransition]
    p_w: np.ndarray

    def __len__(self):
        return len(self.entries)

    def per_trajectory(self) -> dict[int, float]:
        """Probability of one transition of each trajectory."""
        out = {}
        for e, p in zip(self.entries, self.p_w):
            out.setdefault(e.trajectory_id, float(p))
        return out


def transition_sampling_distribution(
    demos: Sequence[Trajectory], records: Iterable[FeasibilityRecord]
) -> WeightedTransitionSet:
    if not demos:
        raise EmptyInputError("no demonstrations given")
    weights = {r.trajectory_id: r.weight for r in records}
    entries = []
    for xi in demos:
        if xi.trajectory_id not in weights:
            raise UnknownTrajectoryError(f"no feasibility record for trajectory {xi.trajectory_id}")
        w = weights[xi.trajectory_id]
        for t in range(len(xi) - 1):
            entries.append(WeightedTransition(xi.states[t], xi.states[t + 1], xi.trajectory_id, t, w))
    if not entries:
        raise EmptyInputError("demonstrations contain no transitions")
    total = math.fsum(e.weight for e in entries)
    if not total > 0:
        raise DegenerateDistributionError("all transition weights are zero")
    p = np.array([e.weight / total for e in entries])
    return WeightedTransitionSet(entries, p)


@dataclass(frozen=True)
class DemonstratorProfile:
    demonstrator_id: int
    demos: tuple = field(repr=False)
    weights: tuple = ()
    mean_feasibility: float = 0.0
    p_j: float | None = None


def build_profiles(demos: Sequence[Trajectory], records: Iterable[FeasibilityRecord]) -> list[DemonstratorProfile]:
    """Group scored demos by demonstrator (ordered by demonstrator_id)."""
    weights = {r.trajectory_id: r.weight for r in records}
    groups: dict[int, list[Trajectory]] = {}
    for xi in demos:
        groups.setdefault(xi.demonstrator_id, []).append(xi)
    out = []
    for did in sorted(groups):
        ws = tuple(weights[xi.trajectory_id] for xi in groups[did])
        out.append(DemonstratorProfile(did, tuple(groups[did]), ws, math.fsum(ws) / len(ws)))
    return out


def demonstrator_distribution(profiles: Sequence[DemonstratorProfile]) -> list[DemonstratorProfile]:
    """Set ``p_j`` proportional to each demonstrator's mean feasibility."""
    if not profiles:
        raise EmptyInputError("no demonstrators")
    for prof in profiles:
        if not prof.weights:
            raise EmptyInputError(f"demonstrator {prof.demonstrator_id} has no scored demos")
    total = math.fsum(p.mean_feasibility for p in profiles)
    if not total > 0:
        raise DegenerateDistributionError("every demonstrator has zero mean feasibility")
    return [replace(p, p_j=p.mean_feasibility / total) for p in profiles]


def budget_sample(profiles: Sequence[DemonstratorProfile], budget: int, seed=0) -> dict[int, int]:
    """Multinomial split of ``budget`` new demos across demonstrators by ``p_j``."""
    if budget < 0:
        raise ConfigError("budget must be >= 0")
    if any(p.p_j is None for p in profiles):
        raise ConfigError("run demonstrator_distribution first")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs = np.array([p.p_j for p in profiles], dtype=float)
    counts = rng.multinomial(budget, probs / probs.sum())
    return {p.demonstrator_id: int(c) for p, c in zip(profiles, counts)}


# -- CSV ----------------------------------------------------------------------

SCORE_COLUMNS = ["trajectory_id", "demonstrator_id", "raw_reward", "w", "p_w"]
PROFILE_COLUMNS = ["demonstrator_id", "mean_feasibility", "p_j"]


def write_scores_csv(path, records: Sequence[FeasibilityRecord], weighted: WeightedTransitionSet) -> None:
    p_w = weighted.per_trajectory()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for r in sorted(records, key=lambda r: r.trajectory_id):
            did = "" if r.demonstrator_id is None else r.demonstrator_id
            w.writerow([r.trajectory_id, did, repr(r.raw_reward), repr(r.weight), repr(p_w.get(r.trajectory_id, 0.0))])


def read_scores_csv(path) -> list[FeasibilityRecord]:
    """Read records back; ``shifted_reward`` is recomputed as ``raw - max raw``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyInputError(f"{path} has no score rows")
    best = max(float(r["raw_reward"]) for r in rows)
    return [
        FeasibilityRecord(
            int(r["trajectory_id"]),
            float(r["raw_reward"]),
            float(r["raw_reward"]) - best,
            float(r["w"]),
            int(r["demonstrator_id"]) if r.get("demonstrator_id") not in (None, "") else None,
        )
        for r in rows
    ]


def write_profiles_csv(path, profiles: Sequence[DemonstratorProfile]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        for p in sorted(profiles, key=lambda p: p.demonstrator_id):
            w.writerow([p.demonstrator_id, repr(p.mean_feasibility), "" if p.p_j is None else repr(p.p_j)])

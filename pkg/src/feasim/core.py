"""Environment abstraction, trajectories, distances and rollout machinery.

Everything in the package speaks in terms of :class:`Environment`: the
demonstrator and imitator families in :mod:`feasim.envs` subclass it, and so
does the feasibility MDP in :mod:`feasim.fmdp`.  States of the plain
environments are tuples of floats (hashable, compared exactly); environments
with real-valued dynamics snap their outputs with :func:`quantize`.

Rewards take ``(s, a, s_next)`` but every bundled environment ignores ``a``:
rewards are functions of the state transition only.
"""

from __future__ import annotations

import enum
import json
import math
import statistics
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    DemoFormatError,
    EmptyInputError,
    InvalidActionError,
    InvalidStateError,
    MissingPolicyEntryError,
    UndefinedCosineError,
)

StateVec = tuple  # tuple[float, ...]
DynamicsParams = Mapping[str, Any]
Policy = Union[Callable[[Hashable], int], Mapping[Hashable, int]]

DEFAULT_QUANTUM = 1e-9


def as_state(values: Iterable[float]) -> StateVec:
    """Coerce ``values`` to a state tuple, rejecting NaN/Inf."""
    s = tuple(float(v) for v in values)
    if not all(math.isfinite(v) for v in s):
        raise InvalidStateError(f"non-finite state {s}")
    return s


def quantize(state: Sequence[float], eps: float = DEFAULT_QUANTUM) -> StateVec:
    """Snap every coordinate to the ``eps`` lattice so equal states hash equal."""
    digits = max(0, int(round(-math.log10(eps))))
    # + 0.0 folds -0.0 into 0.0
    return tuple(round(float(v), digits) + 0.0 for v in state)


class Metric(str, enum.Enum):
    L2 = "L2"
    L1 = "L1"
    COSINE = "COSINE"

    @classmethod
    def parse(cls, value: "Metric | str") -> "Metric":
        if isinstance(value, Metric):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"unknown metric {value!r}") from None


def distance(metric: Metric | str, s: Sequence[float], t: Sequence[float]) -> float:
    """Distance between two states.

    ``COSINE`` is ``1 - cos(angle)`` and lies in ``[0, 2]``; it is undefined
    when either vector is zero.
    """
    metric = Metric.parse(metric)
    if len(s) != len(t):
        raise InvalidStateError(f"dimension mismatch: {len(s)} vs {len(t)}")
    if metric is Metric.L2:
        return math.dist(s, t)
    if metric is Metric.L1:
        return math.fsum(abs(a - b) for a, b in zip(s, t))
    ns, nt = math.hypot(*s), math.hypot(*t)
    if ns == 0.0 or nt == 0.0:
        raise UndefinedCosineError("cosine distance with a zero vector")
    # normalise first so tiny or huge vectors neither underflow nor overflow
    cos = math.fsum((a / ns) * (b / nt) for a, b in zip(s, t))
    return 1.0 - min(1.0, max(-1.0, cos))


class Environment:
    """Deterministic finite-action MDP.

    Subclasses implement :meth:`transition` and :meth:`reward`, and usually
    :meth:`is_terminal`.  ``discount_offset`` shifts the discount exponent of
    returns: an episode with rewards ``r_0 .. r_{T-1}`` is worth
    ``sum_t gamma**(t + discount_offset) * r_t``.
    """

    family: str | None = None
    discount_offset: int = 0

    def __init__(
        self,
        state_dim: int,
        actions: Sequence[Any],
        initial_states: Sequence[Hashable],
        gamma: float,
        horizon: int,
        params: DynamicsParams | None = None,
    ):
        if not 0.0 < gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
        if horizon < 1:
            raise ConfigError(f"horizon must be positive, got {horizon}")
        if not initial_states:
            raise ConfigError("initial_states must be non-empty")
        if not actions:
            raise ConfigError("action table must be non-empty")
        self.state_dim = int(state_dim)
        self.actions = tuple(actions)
        self.initial_states = tuple(initial_states)
        self.gamma = float(gamma)
        self.horizon = int(horizon)
        self.params = dict(params or {})

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def transition(self, s, a: int):
        raise NotImplementedError

    def reward(self, s, a, s_next) -> float:
        raise NotImplementedError

    def is_terminal(self, s) -> bool:
        return False

    def validate_state(self, s) -> None:
        if not isinstance(s, tuple) or len(s) != self.state_dim:
            raise InvalidStateError(f"expected a {self.state_dim}-tuple state, got {s!r}")
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in s):
            raise InvalidStateError(f"non-finite state {s!r}")

    def validate_action(self, a) -> None:
        if isinstance(a, bool) or not isinstance(a, (int, np.integer)) or not 0 <= a < self.n_actions:
            raise InvalidActionError(f"action {a!r} outside 0..{self.n_actions - 1}")

    def __repr__(self):
        return f"{type(self).__name__}({self.params})"


@dataclass(frozen=True)
class Trajectory:
    """State-only demonstration; ``states[0]`` is the start state."""

    states: tuple
    demonstrator_id: int = 0
    trajectory_id: int = 0

    def __post_init__(self):
        states = tuple(tuple(s) if isinstance(s, list) else s for s in self.states)
        if not states:
            raise EmptyInputError("trajectory needs at least one state")
        object.__setattr__(self, "states", states)

    def __len__(self):
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return len(self.states) - 1

    def to_json(self) -> dict:
        return {
            "demonstrator_id": self.demonstrator_id,
            "trajectory_id": self.trajectory_id,
            "states": [list(s) for s in self.states],
        }


@dataclass(frozen=True)
class Transition:
    source: StateVec
    target: StateVec
    trajectory_id: int
    step_index: int


@dataclass
class TransitionSet:
    transitions: list[Transition]
    former_set: frozenset = field(default_factory=frozenset)
    initial_set: frozenset = field(default_factory=frozenset)

    def __len__(self):
        return len(self.transitions)

    def reassemble(self) -> dict[int, tuple]:
        """Rebuild each trajectory's state sequence from its transitions."""
        by_traj: dict[int, list[Transition]] = {}
        for tr in self.transitions:
            by_traj.setdefault(tr.trajectory_id, []).append(tr)
        out = {}
        for tid, trs in by_traj.items():
            trs.sort(key=lambda tr: tr.step_index)
            out[tid] = tuple([trs[0].source] + [tr.target for tr in trs])
        return out


def step(env: Environment, s, a: int):
    """Apply action ``a`` in state ``s`` and return the successor."""
    env.validate_state(s)
    env.validate_action(a)
    return env.transition(s, int(a))


def _lookup(policy: Policy, s) -> int:
    if isinstance(policy, Mapping):
        try:
            return policy[s]
        except KeyError:
            raise MissingPolicyEntryError(f"policy undefined at {s!r}") from None
    try:
        return policy(s)
    except MissingPolicyEntryError:
        raise
    except KeyError as exc:
        raise MissingPolicyEntryError(f"policy undefined at {s!r}") from exc


@dataclass
class Episode:
    states: list
    actions: list[int]
    rewards: list[float]


def simulate(env: Environment, policy: Policy, s0, steps: int) -> Episode:
    """Run ``policy`` from ``s0`` for up to ``steps`` steps, stopping at terminal states."""
    if steps < 0 or steps > env.horizon:
        raise ConfigError(f"steps must lie in 0..{env.horizon}, got {steps}")
    env.validate_state(s0)
    states, actions, rewards = [s0], [], []
    s = s0
    for _ in range(steps):
        if env.is_terminal(s):
            break
        a = _lookup(policy, s)
        s_next = step(env, s, a)
        rewards.append(float(env.reward(s, a, s_next)))
        actions.append(int(a))
        states.append(s_next)
        s = s_next
    return Episode(states, actions, rewards)


def discounted_return(env: Environment, rewards: Sequence[float]) -> float:
    g, k = env.gamma, env.discount_offset
    return math.fsum(g ** (t + k) * r for t, r in enumerate(rewards))


def rollout(env: Environment, policy: Policy, s0, steps: int) -> tuple[Trajectory, float]:
    """Roll ``policy`` out from ``s0``.

    The trajectory has ``steps + 1`` states unless a terminal state is reached
    first, in which case it ends there.
    """
    ep = simulate(env, policy, s0, steps)
    return Trajectory(tuple(ep.states)), discounted_return(env, ep.rewards)


def expected_return(env: Environment, policy: Policy, n_rollouts: int, seed=0) -> tuple[float, float]:
    """Mean and (population) standard deviation of full-horizon returns.

    Start states are drawn uniformly from ``env.initial_states``.
    """
    if n_rollouts < 1:
        raise ConfigError("n_rollouts must be >= 1")
    rng = np.random.default_rng(seed)
    starts = rng.integers(len(env.initial_states), size=n_rollouts)
    cache: dict[int, float] = {}
    returns = []
    for i in starts:
        # deterministic env + deterministic policy: one rollout per start state suffices
        if i not in cache:
            cache[i] = rollout(env, policy, env.initial_states[i], env.horizon)[1]
        returns.append(cache[i])
    # exact-arithmetic mean/pstdev: identical returns give std exactly 0
    return float(statistics.mean(returns)), float(statistics.pstdev(returns))


def collect_transitions(demos: Sequence[Trajectory]) -> TransitionSet:
    if not demos:
        raise EmptyInputError("no demonstrations given")
    seen = set()
    transitions = []
    for xi in demos:
        if len(xi) < 2:
            raise DemoFormatError(f"trajectory {xi.trajectory_id} has fewer than 2 states")
        if xi.trajectory_id in seen:
            raise DemoFormatError(f"duplicate trajectory_id {xi.trajectory_id}")
        seen.add(xi.trajectory_id)
        for t in range(len(xi) - 1):
            transitions.append(Transition(xi.states[t], xi.states[t + 1], xi.trajectory_id, t))
    return TransitionSet(
        transitions,
        former_set=frozenset(tr.source for tr in transitions),
        initial_set=frozenset(xi.states[0] for xi in demos),
    )


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Independent generator for ``seed`` and a stage tag path.

    Streams for different tags never share draws, so adding a stage leaves
    the draws of existing stages untouched.
    """
    words = [zlib.crc32(str(tag).encode()) for tag in tags]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


def derive_seed(seed: int, *tags) -> int:
    """Integer seed for a stage, drawn from :func:`make_rng`."""
    return int(make_rng(seed, *tags).integers(2**63 - 1))


# -- demonstration files ----------------------------------------------------

_REQUIRED_KEYS = {"demonstrator_id", "trajectory_id", "states"}


def parse_demo(record: Mapping[str, Any]) -> Trajectory:
    keys = set(record)
    if any("action" in k.lower() for k in keys):
        raise DemoFormatError("demonstrations must be state-only; found an action field")
    missing = _REQUIRED_KEYS - keys
    if missing:
        raise DemoFormatError(f"missing keys {sorted(missing)}")
    states = [as_state(s) for s in record["states"]]
    if len(states) < 2:
        raise DemoFormatError("a trajectory needs at least 2 states")
    if len({len(s) for s in states}) != 1:
        raise DemoFormatError("states of one trajectory differ in dimension")
    return Trajectory(tuple(states), int(record["demonstrator_id"]), int(record["trajectory_id"]))


def load_demos(path: str | Path) -> list[Trajectory]:
    demos = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                demos.append(parse_demo(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DemoFormatError(f"{path}:{lineno}: {exc}") from exc
    return demos


def save_demos(demos: Iterable[Trajectory], path: str | Path) -> None:
    with open(path, "w") as fh:
        for xi in demos:
            fh.write(json.dumps(xi.to_json()) + "\n")

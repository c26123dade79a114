"""Parameterized environment families, scripted experts and demo generation.

Three families share their state space, reward, start states and horizon
across members; only the action table and transition change with the
dynamics knobs:

``GRID``
    5x5 grid, start (0, 0), goal (4, 4), horizon 12, gamma 0.99.
    Knob ``moveset``: ``I4`` (unit cardinal moves), ``D8`` (cardinal and
    diagonal unit moves) or ``DJ`` (jumps of length 2 along the axes).
``POINTMASS``
    7x7 lattice with a wall at x=3 covering y=0..5 (the only gap is at
    y=6), start (0, 3), goal (6, 3), horizon 16, gamma 0.99.
    Knob ``max_step``: longest move (in lattice units) along each of the 8
    compass directions.  Collision is checked at the landing point only, so
    a ``max_step >= 2`` mass can hop the wall.
``CHAIN``
    Two unit links, state = joint angles in degrees, start (0, 0), goal:
    tip height ``sin(q1) + sin(q1 + q2) >= 1``, horizon 20, gamma 0.99.
    Knobs ``joint_limit_deg`` (both joints), ``limit1_deg`` / ``limit2_deg``
    (per joint, override the shared one) and ``step_deg`` (joint increment,
    default 5).

In every family a step costs -1 and entering the goal adds +10; the goal is
absorbing.  Moves that would leave the valid region are clipped to the
nearest valid state.
"""

from __future__ import annotations

import math
from collections import deque
from typing import NamedTuple

from .core import (
    DynamicsParams,
    Environment,
    Trajectory,
    make_rng,
    quantize,
)
from .errors import ConfigError, ExpertFailureError, MissingPolicyEntryError, UnsupportedError

STEP_COST = -1.0
GOAL_BONUS = 10.0


class Move(NamedTuple):
    name: str
    delta: tuple


class _GoalEnv(Environment):
    """Shared reward: -1 per step, +10 on entering the goal set."""

    def is_goal(self, s) -> bool:
        raise NotImplementedError

    def is_terminal(self, s) -> bool:
        return self.is_goal(s)

    def reward(self, s, a, s_next) -> float:
        bonus = GOAL_BONUS if self.is_goal(s_next) and not self.is_goal(s) else 0.0
        return STEP_COST + bonus


def _check_knobs(family: str, params: DynamicsParams, allowed: set[str]) -> None:
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown {family} knob(s) {sorted(unknown)}; allowed: {sorted(allowed)}")


# -- GRID -------------------------------------------------------------------

_CARDINAL = [Move("E", (1, 0)), Move("N", (0, 1)), Move("W", (-1, 0)), Move("S", (0, -1))]
_DIAGONAL = [Move("NE", (1, 1)), Move("NW", (-1, 1)), Move("SW", (-1, -1)), Move("SE", (1, -1))]
_JUMPS = [Move("E2", (2, 0)), Move("N2", (0, 2)), Move("W2", (-2, 0)), Move("S2", (0, -2))]

GRID_MOVESETS = {"I4": _CARDINAL, "D8": _CARDINAL + _DIAGONAL, "DJ": _JUMPS}


class GridEnv(_GoalEnv):
    family = "GRID"
    size = 5
    goal = (4.0, 4.0)

    def __init__(self, moveset: str = "I4"):
        if moveset not in GRID_MOVESETS:
            raise ConfigError(f"unknown GRID moveset {moveset!r}; choose from {sorted(GRID_MOVESETS)}")
        super().__init__(
            state_dim=2,
            actions=GRID_MOVESETS[moveset],
            initial_states=[(0.0, 0.0)],
            gamma=0.99,
            horizon=12,
            params={"moveset": moveset},
        )

    def is_goal(self, s) -> bool:
        return s == self.goal

    def transition(self, s, a):
        dx, dy = self.actions[a].delta
        hi = self.size - 1
        return (float(min(max(s[0] + dx, 0), hi)), float(min(max(s[1] + dy, 0), hi)))


# -- POINTMASS --------------------------------------------------------------

_COMPASS = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]
_COMPASS_NAMES = ["E", "NE", "N", "NW", "W", "SW", "S", "SE"]


class PointMassEnv(_GoalEnv):
    family = "POINTMASS"
    size = 7
    wall = frozenset((3.0, float(y)) for y in range(6))
    goal = (6.0, 3.0)

    def __init__(self, max_step: int = 1):
        if int(max_step) != max_step or max_step < 1:
            raise ConfigError(f"max_step must be a positive integer, got {max_step!r}")
        max_step = int(max_step)
        actions = [
            Move(f"{name}{k}", (k * dx, k * dy))
            for k in range(1, max_step + 1)
            for name, (dx, dy) in zip(_COMPASS_NAMES, _COMPASS)
        ]
        super().__init__(
            state_dim=2,
            actions=actions,
            initial_states=[(0.0, 3.0)],
            gamma=0.99,
            horizon=16,
            params={"max_step": max_step},
        )

    def is_goal(self, s) -> bool:
        return s == self.goal

    def is_free(self, s) -> bool:
        return s not in self.wall

    def _clip(self, x, y):
        hi = self.size - 1
        return (float(min(max(x, 0), hi)), float(min(max(y, 0), hi)))

    def transition(self, s, a):
        dx, dy = self.actions[a].delta
        k = max(abs(dx), abs(dy))
        ux, uy = dx // k, dy // k
        # back off along the move until the landing point is free; j = 0 is s itself
        for j in range(k, 0, -1):
            p = self._clip(s[0] + j * ux, s[1] + j * uy)
            if self.is_free(p):
                return p
        return s


# -- CHAIN ------------------------------------------------------------------

_CHAIN_DIRS = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)]


def tip_height(q) -> float:
    q1, q2 = math.radians(q[0]), math.radians(q[1])
    return math.sin(q1) + math.sin(q1 + q2)


class ChainEnv(_GoalEnv):
    family = "CHAIN"
    goal_height = 1.0

    def __init__(self, joint_limit_deg: float = 90.0, limit1_deg=None, limit2_deg=None, step_deg: float = 5.0):
        lim1 = float(limit1_deg if limit1_deg is not None else joint_limit_deg)
        lim2 = float(limit2_deg if limit2_deg is not None else joint_limit_deg)
        if not (0 < lim1 <= 180 and 0 < lim2 <= 180):
            raise ConfigError(f"joint limits must lie in (0, 180], got {lim1}, {lim2}")
        if step_deg <= 0:
            raise ConfigError("step_deg must be positive")
        self.limits = (lim1, lim2)
        actions = [
            Move(f"({d1:+d},{d2:+d})", (d1 * float(step_deg), d2 * float(step_deg))) for d1, d2 in _CHAIN_DIRS
        ]
        super().__init__(
            state_dim=2,
            actions=actions,
            initial_states=[(0.0, 0.0)],
            gamma=0.99,
            horizon=20,
            params={"limit1_deg": lim1, "limit2_deg": lim2, "step_deg": float(step_deg)},
        )

    def is_goal(self, s) -> bool:
        return tip_height(s) >= self.goal_height - 1e-12

    def transition(self, s, a):
        d1, d2 = self.actions[a].delta
        l1, l2 = self.limits
        return quantize((min(max(s[0] + d1, -l1), l1), min(max(s[1] + d2, -l2), l2)))


# -- registry ---------------------------------------------------------------

_FAMILIES = {
    "GRID": (GridEnv, {"moveset"}),
    "POINTMASS": (PointMassEnv, {"max_step"}),
    "CHAIN": (ChainEnv, {"joint_limit_deg", "limit1_deg", "limit2_deg", "step_deg"}),
}

FAMILIES = tuple(_FAMILIES)


def make_env(family_id: str, params: DynamicsParams | None = None) -> Environment:
    """Build a family member, e.g. ``make_env("grid", {"moveset": "D8"})``."""
    key = str(family_id).upper()
    if key not in _FAMILIES:
        raise ConfigError(f"unknown family {family_id!r}; choose from {FAMILIES}")
    cls, knobs = _FAMILIES[key]
    params = dict(params or {})
    _check_knobs(key, params, knobs)
    if key == "POINTMASS" and "max_step" in params:
        params["max_step"] = _as_int(params["max_step"], "max_step")
    return cls(**params)


def _as_int(value, name):
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None
    if f != int(f):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return int(f)


def parse_params(items) -> dict:
    """Parse ``["moveset=D8", "max_step=2"]`` into a knob dict (numbers become floats/ints)."""
    out = {}
    for item in items or []:
        for part in str(item).split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise ConfigError(f"expected key=value, got {part!r}")
            k, v = (x.strip() for x in part.split("=", 1))
            out[k] = _coerce(v)
    return out


def _coerce(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


# -- experts ----------------------------------------------------------------


def reachable_states(env: Environment) -> set:
    """All states reachable from the start states (terminal states are not expanded)."""
    seen = set(env.initial_states)
    queue = deque(env.initial_states)
    while queue:
        s = queue.popleft()
        if env.is_terminal(s):
            continue
        for a in range(env.n_actions):
            s2 = env.transition(s, a)
            if s2 not in seen:
                seen.add(s2)
                queue.append(s2)
    return seen


class ExpertPolicy:
    """Shortest-path-to-goal policy.

    ``steps_to_goal`` maps every reachable state to its distance (in moves)
    from the goal set.  Calling the policy returns the lowest-index action on
    a shortest path; :meth:`optimal_actions` lists all of them.
    """

    def __init__(self, env: Environment, steps_to_goal: dict):
        self.env = env
        self.steps_to_goal = steps_to_goal

    def optimal_actions(self, s) -> list[int]:
        d = self.steps_to_goal.get(s)
        if d is None:
            raise MissingPolicyEntryError(f"expert has no plan for {s!r}")
        if d == 0 or math.isinf(d):
            return []
        return [
            a
            for a in range(self.env.n_actions)
            if self.steps_to_goal.get(self.env.transition(s, a), math.inf) == d - 1
        ]

    def __call__(self, s) -> int:
        acts = self.optimal_actions(s)
        if not acts:
            raise ExpertFailureError(f"no path to the goal from {s!r}")
        return acts[0]


def scripted_expert(env: Environment) -> ExpertPolicy:
    if getattr(env, "family", None) not in _FAMILIES or not isinstance(env, _GoalEnv):
        raise UnsupportedError(f"no planner for {env!r}")
    states = reachable_states(env)
    preds: dict = {s: [] for s in states}
    for s in states:
        if env.is_terminal(s):
            continue
        for a in range(env.n_actions):
            preds[env.transition(s, a)].append(s)
    dist = {s: math.inf for s in states}
    queue = deque()
    for s in states:
        if env.is_goal(s):
            dist[s] = 0
            queue.append(s)
    while queue:
        s = queue.popleft()
        for p in preds[s]:
            if math.isinf(dist[p]):
                dist[p] = dist[s] + 1
                queue.append(p)
    return ExpertPolicy(env, dist)


def generate_demos(
    env: Environment,
    expert: ExpertPolicy,
    n: int,
    seed: int = 0,
    *,
    demonstrator_id: int = 0,
    first_trajectory_id: int = 0,
    start_index: int = 0,
    tie_break: str = "random",
) -> list[Trajectory]:
    """Generate ``n`` goal-reaching demonstrations.

    Each demo ``i`` draws from its own stream ``(seed, i + start_index)``,
    so asking for more demos later extends a corpus without changing it.
    With ``tie_break="random"`` the expert picks uniformly among its optimal
    actions; ``"lowest"`` always takes the lowest index.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if tie_break not in ("random", "lowest"):
        raise ConfigError(f"tie_break must be 'random' or 'lowest', got {tie_break!r}")
    demos = []
    for i in range(n):
        rng = make_rng(seed, "demo", start_index + i)
        s = env.initial_states[int(rng.integers(len(env.initial_states)))]
        states = [s]
        for _ in range(env.horizon):
            if env.is_terminal(s):
                break
            acts = expert.optimal_actions(s)
            if not acts:
                break
            a = acts[int(rng.integers(len(acts)))] if tie_break == "random" else acts[0]
            s = env.transition(s, a)
            states.append(s)
        if not env.is_terminal(s) or len(states) < 2:
            raise ExpertFailureError(f"expert did not reach the goal within {env.horizon} steps in {env!r}")
        demos.append(Trajectory(tuple(states), demonstrator_id, first_trajectory_id + i))
    return demos

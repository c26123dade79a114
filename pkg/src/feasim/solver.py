"""Tabular solvers: exact value iteration and epsilon-greedy Q-learning.

Both work on any :class:`~feasim.core.Environment` with hashable states,
f-MDPs included.  Values are expressed in the environment's return
convention (see ``Environment.discount_offset``), so for a trajectory
f-MDP the value of a start state is directly the feasibility sum.

Ties between equally good actions always go to the lowest action index.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Environment, simulate, discounted_return
from .errors import ConfigError, MissingPolicyEntryError, StateSpaceTooLargeError
from .fmdp import FMdpState

DEFAULT_MAX_STATES = 200_000
TIE_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    episodes: int = 50_000
    learning_rate: float = 0.1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    seed: int = 0
    vi_tolerance: float = 1e-10
    max_states: int = DEFAULT_MAX_STATES

    def __post_init__(self):
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ConfigError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.vi_tolerance <= 0:
            raise ConfigError("vi_tolerance must be positive")

    def epsilon(self, episode: int) -> float:
        if self.episodes <= 1:
            return self.epsilon_end
        frac = episode / (self.episodes - 1)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


class TabularPolicy:
    """Deterministic state -> action table.

    ``q`` holds the action values the table was read from (``None`` when
    loaded from disk).
    """

    def __init__(self, table: dict, n_actions: int, q: dict | None = None):
        self.table = dict(table)
        self.n_actions = n_actions
        self.q = q

    def __call__(self, s) -> int:
        try:
            return self.table[s]
        except KeyError:
            raise MissingPolicyEntryError(f"no policy entry for {s!r}") from None

    def __contains__(self, s):
        return s in self.table

    def __len__(self):
        return len(self.table)

    def __eq__(self, other):
        return isinstance(other, TabularPolicy) and self.table == other.table

    def to_json(self) -> dict:
        table = {encode_state(s): int(a) for s, a in self.table.items()}
        return {"kind": "tabular", "n_actions": self.n_actions, "table": dict(sorted(table.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "TabularPolicy":
        return cls({decode_state(k): int(a) for k, a in obj["table"].items()}, int(obj["n_actions"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def encode_state(s) -> str:
    if isinstance(s, FMdpState):
        obj = {"state": list(s.state), "traj": s.traj, "t": s.t, "anchor": s.anchor}
    else:
        obj = [float(v) for v in s]
    return json.dumps(obj, separators=(",", ":"))


def decode_state(key: str):
    obj = json.loads(key)
    if isinstance(obj, dict):
        return FMdpState(tuple(float(v) for v in obj["state"]), obj["traj"], obj["t"], obj.get("anchor", 0))
    return tuple(float(v) for v in obj)


def _argmax_lowest(values) -> int:
    best = max(values)
    for a, v in enumerate(values):
        if v >= best - TIE_TOL:
            return a
    return 0  # pragma: no cover


def _outcomes(env: Environment, s, a):
    fn = getattr(env, "outcomes", None)
    if fn is None:
        return [(1.0, env.transition(s, a))]
    return fn(s, a)


def enumerate_states(env: Environment, max_states: int = DEFAULT_MAX_STATES) -> list:
    """Breadth-first list of states reachable from ``env.initial_states``."""
    order = list(dict.fromkeys(env.initial_states))
    seen = set(order)
    queue = deque(order)
    while queue:
        s = queue.popleft()
        if env.is_terminal(s):
            continue
        for a in range(env.n_actions):
            for _, s2 in _outcomes(env, s, a):
                if s2 not in seen:
                    seen.add(s2)
                    order.append(s2)
                    queue.append(s2)
                    if len(order) > max_states:
                        raise StateSpaceTooLargeError(
                            f"more than {max_states} reachable states; use q_learning instead"
                        )
    return order


def value_iteration(
    env: Environment,
    tol: float = 1e-10,
    max_states: int = DEFAULT_MAX_STATES,
    max_sweeps: int = 1_000_000,
) -> tuple[TabularPolicy, dict]:
    """Solve ``env`` exactly over its reachable state space.

    Returns the greedy policy (defined on every reachable non-terminal
    state) and the optimal value of every reachable state.  Terminal
    states are worth 0.
    """
    states = enumerate_states(env, max_states)
    index = {s: i for i, s in enumerate(states)}
    n, na = len(states), env.n_actions
    terminal = np.array([env.is_terminal(s) for s in states])
    scale = env.gamma**env.discount_offset

    rows = []  # (state idx, action, next idx, prob, reward)
    for i, s in enumerate(states):
        if terminal[i]:
            continue
        for a in range(na):
            for p, s2 in _outcomes(env, s, a):
                rows.append((i, a, index[s2], p, scale * env.reward(s, a, s2)))
    si = np.array([r[0] for r in rows], dtype=np.int64)
    ai = np.array([r[1] for r in rows], dtype=np.int64)
    ni = np.array([r[2] for r in rows], dtype=np.int64)
    pr = np.array([r[3] for r in rows], dtype=float)
    rw = np.array([r[4] for r in rows], dtype=float)
    flat = si * na + ai

    def backup(v):
        q = np.zeros(n * na)
        np.add.at(q, flat, pr * (rw + env.gamma * v[ni]))
        return q.reshape(n, na)

    v = np.zeros(n)
    for _ in range(max_sweeps):
        q = backup(v)
        v_new = np.where(terminal, 0.0, q.max(axis=1))
        residual = float(np.max(np.abs(v_new - v))) if n else 0.0
        v = v_new
        if residual < tol:
            break
    else:
        raise ConfigError(f"value iteration did not reach tolerance {tol} in {max_sweeps} sweeps")

    q = backup(v)
    table = {s: _argmax_lowest(q[i]) for i, s in enumerate(states) if not terminal[i]}
    qmap = {s: q[i].tolist() for i, s in enumerate(states) if not terminal[i]}
    values = {s: float(v[i]) for i, s in enumerate(states)}
    return TabularPolicy(table, na, qmap), values


def q_learning(env: Environment, config: SolverConfig = SolverConfig()) -> TabularPolicy:
    """Tabular Q-learning with a linearly decaying epsilon-greedy schedule.

    Q starts at 0.  Transitions are taken from ``env.transition`` (the
    nominal dynamics).  The returned table covers every state seen during
    training plus the greedy closure from each start state.
    """
    rng = random.Random(config.seed)
    na, gamma, lr = env.n_actions, env.gamma, config.learning_rate
    scale = gamma**env.discount_offset
    starts = env.initial_states
    q: dict = {}
    model: dict = {}
    zeros = [0.0] * na

    for ep in range(config.episodes):
        eps = config.epsilon(ep)
        s = starts[rng.randrange(len(starts))]
        for _ in range(env.horizon):
            if env.is_terminal(s):
                break
            qs = q.get(s)
            if qs is None:
                qs = q[s] = [0.0] * na
            if rng.random() < eps:
                a = rng.randrange(na)
            else:
                a = _argmax_lowest(qs)
            key = (s, a)
            hit = model.get(key)
            if hit is None:
                s2 = env.transition(s, a)
                hit = model[key] = (s2, scale * env.reward(s, a, s2), env.is_terminal(s2))
            s2, r, done = hit
            target = r if done else r + gamma * max(q.get(s2, zeros))
            qs[a] += lr * (target - qs[a])
            s = s2

    table = {s: _argmax_lowest(vals) for s, vals in q.items()}
    for s0 in starts:
        s = s0
        for _ in range(env.horizon):
            if env.is_terminal(s):
                break
            if s not in table:
                table[s] = _argmax_lowest(q.get(s, zeros))
            s = env.transition(s, table[s])
    return TabularPolicy(table, na, q)


def greedy_return(env: Environment, policy, start) -> float:
    """Return of the deterministic rollout of ``policy`` from ``start``."""
    ep = simulate(env, policy, start, env.horizon)
    return discounted_return(env, ep.rewards)


def learned_start_value(policy: TabularPolicy, start) -> float:
    """``max_a Q(start, a)`` from a Q-learning policy (0 if never visited)."""
    vals = (policy.q or {}).get(start)
    return max(vals) if vals else 0.0

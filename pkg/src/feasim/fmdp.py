"""Feasibility MDPs built from a demonstration set and the imitator's environment.

An f-MDP moves the imitator's state with the imitator's own actions and
transition, and pays ``-dist(s_next, target)`` where ``target`` is the
demonstration state the imitator is supposed to be at after the step.  The
f-MDP state carries the tracked trajectory and time index explicitly
(:class:`FMdpState`), which keeps the reward Markov.

Two variants:

* ``ONE_STEP``: episodes start at ``s_t`` of a uniformly drawn demo
  transition ``(s_t, s_{t+1})`` and end after one step.
* ``TRAJECTORY``: episodes start at ``s_0`` of a uniformly drawn demo and
  last as many steps as that demo.  Returns are discounted as
  ``sum_t gamma_f**(t+1) * r_t`` (``discount_offset = 1``) so that the
  optimal return from a start state *is* the feasibility sum
  ``-sum_{t>=1} gamma_f**t * dist(s_t, s_t^d)``.
"""

from __future__ import annotations

import enum
from typing import NamedTuple, Sequence

from .core import Environment, Metric, Trajectory, distance
from .errors import ConfigError, DemoFormatError, EmptyInputError, InvalidStateError, UnknownTrajectoryError


class Variant(str, enum.Enum):
    ONE_STEP = "ONE_STEP"
    TRAJECTORY = "TRAJECTORY"


class FMdpState(NamedTuple):
    state: tuple  # imitator state
    traj: int  # tracked trajectory_id
    t: int  # steps taken in this episode
    anchor: int = 0  # demo index the episode started from

    @property
    def target_index(self) -> int:
        return self.anchor + self.t


class FMdp(Environment):
    family = "FMDP"

    def __init__(
        self,
        variant: Variant | str,
        imitator_env: Environment,
        demos: Sequence[Trajectory],
        metric: Metric | str = Metric.L2,
        gamma_f: float = 0.9,
    ):
        self.variant = Variant(variant)
        self.imitator_env = imitator_env
        self.metric = Metric.parse(metric)
        self.demos = _index_demos(demos, imitator_env)
        if self.variant is Variant.TRAJECTORY:
            starts = [FMdpState(xi.states[0], tid, 0, 0) for tid, xi in self.demos.items()]
            horizon = max(len(xi) - 1 for xi in self.demos.values())
            self.discount_offset = 1
        else:
            starts = [
                FMdpState(xi.states[k], tid, 0, k) for tid, xi in self.demos.items() for k in range(len(xi) - 1)
            ]
            horizon = 1
            self.discount_offset = 0
        super().__init__(
            state_dim=imitator_env.state_dim,
            actions=imitator_env.actions,
            initial_states=starts,
            gamma=gamma_f,
            horizon=horizon,
            params={"variant": self.variant.value, "metric": self.metric.value, "gamma_f": gamma_f},
        )
        self.gamma_f = self.gamma

    def demo(self, traj: int) -> Trajectory:
        try:
            return self.demos[traj]
        except KeyError:
            raise UnknownTrajectoryError(f"trajectory {traj} is not tracked by this f-MDP") from None

    def target(self, x: FMdpState):
        return self.demos[x.traj].states[x.target_index]

    def start_state(self, xi: Trajectory) -> FMdpState:
        known = self.demo(xi.trajectory_id)
        if known.states != xi.states:
            raise UnknownTrajectoryError(f"trajectory {xi.trajectory_id} differs from the tracked one")
        return FMdpState(xi.states[0], xi.trajectory_id, 0, 0)

    def validate_state(self, x) -> None:
        if not isinstance(x, FMdpState):
            raise InvalidStateError(f"expected an FMdpState, got {x!r}")
        self.imitator_env.validate_state(x.state)
        xi = self.demo(x.traj)
        if x.t < 0 or x.anchor < 0 or x.target_index >= len(xi):
            raise InvalidStateError(f"time index out of range for trajectory {x.traj}: {x!r}")

    def is_terminal(self, x: FMdpState) -> bool:
        if self.variant is Variant.ONE_STEP:
            return x.t >= 1
        return x.target_index >= len(self.demos[x.traj]) - 1

    def transition(self, x: FMdpState, a: int) -> FMdpState:
        return FMdpState(self.imitator_env.transition(x.state, a), x.traj, x.t + 1, x.anchor)

    def reward(self, x, a, x_next) -> float:
        return -distance(self.metric, x_next.state, self.target(x_next))

    # stochastic imitator environments expose outcomes/sample_transition; forward them
    def outcomes(self, x: FMdpState, a: int):
        inner = getattr(self.imitator_env, "outcomes", None)
        if inner is None:
            return [(1.0, self.transition(x, a))]
        return [(p, FMdpState(s2, x.traj, x.t + 1, x.anchor)) for p, s2 in inner(x.state, a)]

    def sample_transition(self, x: FMdpState, a: int, rng) -> FMdpState:
        inner = getattr(self.imitator_env, "sample_transition", None)
        if inner is None:
            return self.transition(x, a)
        return FMdpState(inner(x.state, a, rng), x.traj, x.t + 1, x.anchor)


def _index_demos(demos: Sequence[Trajectory], env: Environment) -> dict[int, Trajectory]:
    if not demos:
        raise EmptyInputError("an f-MDP needs at least one demonstration")
    out: dict[int, Trajectory] = {}
    for xi in demos:
        if xi.trajectory_id in out:
            raise DemoFormatError(f"duplicate trajectory_id {xi.trajectory_id}")
        if len(xi) < 2:
            raise DemoFormatError(f"trajectory {xi.trajectory_id} has fewer than 2 states")
        for s in xi.states:
            env.validate_state(s)
        out[xi.trajectory_id] = xi
    return out


def build_onestep_fmdp(demos: Sequence[Trajectory], imitator_env: Environment, metric=Metric.L2) -> FMdp:
    return FMdp(Variant.ONE_STEP, imitator_env, demos, metric, gamma_f=1.0)


def build_trajectory_fmdp(
    demos: Sequence[Trajectory], imitator_env: Environment, metric=Metric.L2, gamma_f: float = 0.9
) -> FMdp:
    if not 0.0 < gamma_f <= 1.0:
        raise ConfigError(f"gamma_f must lie in (0, 1], got {gamma_f}")
    return FMdp(Variant.TRAJECTORY, imitator_env, demos, metric, gamma_f)

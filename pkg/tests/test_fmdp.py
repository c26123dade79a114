from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import traj
from feasim import FMdpState, build_onestep_fmdp, build_trajectory_fmdp, make_env, value_iteration
from feasim.core import simulate, step
from feasim.errors import ConfigError, DemoFormatError, EmptyInputError, InvalidStateError, UnknownTrajectoryError
from feasim.fmdp import Variant


def _best_one_step(f, start):
    return max(f.reward(start, a, f.transition(start, a)) for a in range(f.n_actions))


def test_onestep_examples(grid):
    f = build_onestep_fmdp([traj([(0, 0), (1, 1)])], grid("I4"))
    assert _best_one_step(f, f.initial_states[0]) == -1.0
    f = build_onestep_fmdp([traj([(0, 0), (1, 0)])], grid("I4"))
    assert _best_one_step(f, f.initial_states[0]) == 0.0
    f = build_onestep_fmdp([traj([(0, 0), (2, 0)])], grid("DJ"))
    assert _best_one_step(f, f.initial_states[0]) == 0.0


def test_onestep_starts_cover_every_transition(grid):
    demos = [traj([(0, 0), (1, 0), (2, 0)], 0), traj([(0, 0), (0, 1)], 1)]
    f = build_onestep_fmdp(demos, grid("I4"))
    assert f.variant is Variant.ONE_STEP and f.horizon == 1
    assert len(f.initial_states) == 3
    assert {f.target(FMdpState(x.state, x.traj, 1, x.anchor)) for x in f.initial_states} == {
        (1.0, 0.0), (2.0, 0.0), (0.0, 1.0)
    }
    for x in f.initial_states:
        assert all(f.is_terminal(f.transition(x, a)) for a in range(f.n_actions))


def test_trajectory_fmdp_feasible_demo_zero(i4):
    xi = traj([(0, 0), (1, 0), (2, 0), (2, 1), (3, 1), (4, 1), (4, 2), (4, 3), (4, 4)])
    f = build_trajectory_fmdp([xi], i4)
    _, v = value_iteration(f)
    assert v[f.initial_states[0]] == 0.0


def test_trajectory_fmdp_xi_diag(i4, xi_diag):
    f = build_trajectory_fmdp([xi_diag], i4, gamma_f=0.9)
    policy, v = value_iteration(f)
    assert oracles.XI_DIAG_RAW == pytest.approx(-5.5313, abs=1e-4)
    assert v[f.initial_states[0]] == pytest.approx(oracles.XI_DIAG_RAW, abs=1e-12)
    assert oracles.best_tracking(i4, xi_diag.states) == pytest.approx(oracles.XI_DIAG_RAW, abs=1e-12)
    ep = simulate(f, policy, f.initial_states[0], f.horizon)
    assert [x.state for x in ep.states[1:]] in (
        [(1.0, 0.0), (1.0, 1.0), (2.0, 1.0), (2.0, 2.0)],
        [(0.0, 1.0), (1.0, 1.0), (1.0, 2.0), (2.0, 2.0)],
    )


def test_trajectory_fmdp_length_two(i4):
    f = build_trajectory_fmdp([traj([(0, 0), (1, 0)])], i4)
    _, v = value_iteration(f)
    assert v[f.initial_states[0]] == 0.0
    assert f.horizon == 1


def test_trajectory_fmdp_structure(i4):
    demos = [traj([(0, 0), (1, 0), (2, 0)], 5), traj([(0, 0), (0, 1)], 9)]
    f = build_trajectory_fmdp(demos, i4)
    assert f.initial_states == (FMdpState((0.0, 0.0), 5, 0), FMdpState((0.0, 0.0), 9, 0))
    assert f.horizon == 2 and f.discount_offset == 1
    assert f.actions == i4.actions
    assert f.is_terminal(FMdpState((0.0, 0.0), 9, 1))
    assert not f.is_terminal(FMdpState((0.0, 0.0), 5, 1))
    assert f.is_terminal(FMdpState((0.0, 0.0), 5, 2))


def test_fmdp_validation(i4):
    with pytest.raises(EmptyInputError):
        build_trajectory_fmdp([], i4)
    with pytest.raises(ConfigError):
        build_trajectory_fmdp([traj([(0, 0), (1, 0)])], i4, gamma_f=0.0)
    with pytest.raises(DemoFormatError):
        build_trajectory_fmdp([traj([(0, 0), (1, 0)], 1), traj([(0, 0), (0, 1)], 1)], i4)
    f = build_trajectory_fmdp([traj([(0, 0), (1, 0)], 1)], i4)
    with pytest.raises(UnknownTrajectoryError):
        f.start_state(traj([(0, 0), (1, 0)], 2))
    with pytest.raises(UnknownTrajectoryError):
        f.start_state(traj([(0, 0), (0, 1)], 1))
    with pytest.raises(InvalidStateError):
        step(f, FMdpState((0.0, 0.0), 1, 3), 0)
    with pytest.raises(InvalidStateError):
        step(f, (0.0, 0.0), 0)


point = st.tuples(st.integers(0, 4), st.integers(0, 4))
paths = st.lists(point, min_size=2, max_size=7)


@given(st.lists(paths, min_size=1, max_size=3), st.sampled_from(["I4", "D8", "DJ"]), st.sampled_from(["L1", "L2"]))
def test_rewards_and_values_non_positive(ps, moveset, metric):
    env = make_env("grid", {"moveset": moveset})
    f = build_trajectory_fmdp([traj(p, i) for i, p in enumerate(ps)], env, metric)
    _, v = value_iteration(f)
    assert all(val <= 0.0 for val in v.values())
    for x in list(v)[:50]:
        if not f.is_terminal(x):
            assert all(f.reward(x, a, f.transition(x, a)) <= 0.0 for a in range(f.n_actions))


@given(paths, st.sampled_from(["I4", "D8", "DJ"]))
def test_value_matches_independent_recursion(p, moveset):
    env = make_env("grid", {"moveset": moveset})
    xi = traj(p)
    f = build_trajectory_fmdp([xi], env)
    _, v = value_iteration(f)
    assert v[f.initial_states[0]] == pytest.approx(oracles.best_tracking(env, xi.states), abs=1e-9)


@given(st.lists(st.integers(0, 7), min_size=1, max_size=6))
def test_embedding_fidelity(actions):
    env = make_env("grid", {"moveset": "D8"})
    xi = traj([(2, 2)] * (len(actions) + 1))
    f = build_trajectory_fmdp([xi], env)
    x, s = f.initial_states[0], xi.states[0]
    for a in actions:
        x, s = step(f, x, a), step(env, s, a)
        assert x.state == s


@given(st.lists(paths, min_size=1, max_size=3))
def test_onestep_matches_trajectory_first_step(ps):
    env = make_env("grid", {"moveset": "I4"})
    demos = [traj(p, i) for i, p in enumerate(ps)]
    one = build_onestep_fmdp(demos, env)
    full = build_trajectory_fmdp(demos, env)
    for x in full.initial_states:
        greedy_first = _best_one_step(full, x)
        match = next(y for y in one.initial_states if y.traj == x.traj and y.anchor == 0)
        assert greedy_first == _best_one_step(one, match)


def test_feasible_demo_zero_for_other_families():
    pm = make_env("pointmass", {"max_step": 1})
    xi = traj([(0, 3), (1, 4), (2, 5), (3, 6), (4, 5), (5, 4), (6, 3)])
    f = build_trajectory_fmdp([xi], pm)
    _, v = value_iteration(f)
    assert v[f.initial_states[0]] == 0.0
    assert math.isclose(oracles.best_tracking(pm, xi.states), 0.0, abs_tol=0.0)

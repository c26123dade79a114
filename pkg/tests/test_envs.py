from __future__ import annotations

import itertools

import pytest

from feasim import generate_demos, make_env, scripted_expert, value_iteration
from feasim.core import Environment, rollout
from feasim.envs import FAMILIES, ChainEnv, parse_params, reachable_states, tip_height
from feasim.errors import ConfigError, ExpertFailureError, UnsupportedError
from feasim.imitate import recover_action

FAMILY_MEMBERS = {
    "GRID": [{"moveset": m} for m in ("I4", "D8", "DJ")],
    "POINTMASS": [{"max_step": k} for k in (1, 2, 3)],
    "CHAIN": [{}, {"joint_limit_deg": 45}, {"limit1_deg": 60, "limit2_deg": 120}],
}
ALL_MEMBERS = [(fam, params) for fam, members in FAMILY_MEMBERS.items() for params in members]


def test_make_env_action_counts():
    assert make_env("GRID", {"moveset": "I4"}).n_actions == 4
    assert make_env("grid", {"moveset": "D8"}).n_actions == 8
    assert make_env("grid", {"moveset": "DJ"}).n_actions == 4
    assert make_env("pointmass", {"max_step": 2}).n_actions == 16
    assert make_env("chain").n_actions == 8


@pytest.mark.parametrize(
    "family, params",
    [("grid", {"speed": 2}), ("grid", {"moveset": "K9"}), ("pointmass", {"max_step": 0}),
     ("pointmass", {"max_step": 1.5}), ("chain", {"joint_limit_deg": 0}), ("chain", {"step_deg": -5}),
     ("maze", {})],
)
def test_make_env_rejects_bad_knobs(family, params):
    with pytest.raises(ConfigError):
        make_env(family, params)


def test_chain_limit_10_clips_exhaustively():
    env = make_env("CHAIN", {"joint_limit_deg": 10})
    states = reachable_states(env)
    assert states
    for s in states:
        assert all(abs(q) <= 10.0 for q in s)
        for a in range(env.n_actions):
            d1, d2 = env.actions[a].delta
            s2 = env.transition(s, a)
            assert s2 == (max(-10.0, min(10.0, s[0] + d1)), max(-10.0, min(10.0, s[1] + d2)))


@pytest.mark.parametrize("family", FAMILIES)
def test_family_members_share_everything_but_dynamics(family):
    envs = [make_env(family, p) for p in FAMILY_MEMBERS[family]]
    ref = envs[0]
    probe = sorted(reachable_states(ref))[:25]
    for env in envs[1:]:
        assert env.state_dim == ref.state_dim
        assert env.initial_states == ref.initial_states
        assert env.horizon == ref.horizon and env.gamma == ref.gamma
        for s, s2 in itertools.product(probe, probe):
            assert env.reward(s, 0, s2) == ref.reward(s, 0, s2)


def test_grid_rewards():
    env = make_env("grid", {"moveset": "I4"})
    assert env.reward((0.0, 0.0), 0, (1.0, 0.0)) == -1.0
    assert env.reward((3.0, 4.0), 0, (4.0, 4.0)) == 9.0
    assert env.is_terminal((4.0, 4.0))


def test_pointmass_wall():
    pm1 = make_env("pointmass", {"max_step": 1})
    pm2 = make_env("pointmass", {"max_step": 2})
    east = 0
    assert pm1.transition((2.0, 3.0), east) == (2.0, 3.0)
    assert pm2.transition((2.0, 3.0), 8 + east) == (4.0, 3.0)
    assert pm1.transition((2.0, 6.0), east) == (3.0, 6.0)


# -- experts ------------------------------------------------------------------


def _walk(env, expert):
    xi, ret = rollout(env, expert, env.initial_states[0], env.horizon)
    return xi.states, ret


def test_expert_paths():
    i4, d8, dj = (make_env("grid", {"moveset": m}) for m in ("I4", "D8", "DJ"))
    states, _ = _walk(i4, scripted_expert(i4))
    assert len(states) - 1 == 8 and states[-1] == (4.0, 4.0)
    states, _ = _walk(d8, scripted_expert(d8))
    assert states == tuple((float(k), float(k)) for k in range(5))
    states, _ = _walk(dj, scripted_expert(dj))
    assert states == ((0.0, 0.0), (2.0, 0.0), (4.0, 0.0), (4.0, 2.0), (4.0, 4.0))


@pytest.mark.parametrize("family, params", ALL_MEMBERS)
def test_expert_matches_value_iteration(family, params):
    env = make_env(family, params)
    expert = scripted_expert(env)
    _, values = value_iteration(env)
    s0 = env.initial_states[0]
    _, ret = _walk(env, expert)
    assert ret == pytest.approx(values[s0], abs=1e-9)


def test_expert_unsupported():
    class Bare(Environment):
        def transition(self, s, a):
            return s

    with pytest.raises(UnsupportedError):
        scripted_expert(Bare(1, [0], [(0.0,)], 0.9, 3))


def test_expert_failure_when_goal_unreachable():
    env = make_env("chain", {"joint_limit_deg": 10})
    assert max(tip_height(s) for s in reachable_states(env)) < ChainEnv.goal_height
    with pytest.raises(ExpertFailureError):
        generate_demos(env, scripted_expert(env), 1)


# -- demos --------------------------------------------------------------------


def test_generate_demos_examples():
    d8 = make_env("grid", {"moveset": "D8"})
    demos = generate_demos(d8, scripted_expert(d8), 3, seed=0)
    assert len(demos) == 3 and all(len(xi) == 5 for xi in demos)
    i4 = make_env("grid", {"moveset": "I4"})
    demos = generate_demos(i4, scripted_expert(i4), 1, seed=0)
    assert len(demos) == 1 and len(demos[0]) == 9
    with pytest.raises(ConfigError):
        generate_demos(i4, scripted_expert(i4), 0)


def test_generate_demos_deterministic_and_extendable():
    env = make_env("grid", {"moveset": "I4"})
    expert = scripted_expert(env)
    a = generate_demos(env, expert, 6, seed=4)
    assert a == generate_demos(env, expert, 6, seed=4)
    head = generate_demos(env, expert, 2, seed=4)
    tail = generate_demos(env, expert, 4, seed=4, first_trajectory_id=2, start_index=2)
    assert head + tail == a
    assert len({xi.states for xi in generate_demos(env, expert, 30, seed=4)}) > 1


def test_generate_demos_lowest_tie_break_is_the_expert_path():
    env = make_env("grid", {"moveset": "DJ"})
    demos = generate_demos(env, scripted_expert(env), 3, seed=1, tie_break="lowest")
    assert {xi.states for xi in demos} == {((0.0, 0.0), (2.0, 0.0), (4.0, 0.0), (4.0, 2.0), (4.0, 4.0))}
    with pytest.raises(ConfigError):
        generate_demos(env, scripted_expert(env), 1, tie_break="best")


@pytest.mark.parametrize("family, params", ALL_MEMBERS)
def test_demos_are_feasible_in_their_own_env(family, params):
    env = make_env(family, params)
    for xi in generate_demos(env, scripted_expert(env), 5, seed=2):
        assert env.is_terminal(xi.states[-1])
        s = xi.states[0]
        for target in xi.states[1:]:
            rec = recover_action(env, s, target)
            assert rec.residual == 0.0
            s = env.transition(s, rec.best_action)
            assert s == target


def test_parse_params():
    assert parse_params(["moveset=D8"]) == {"moveset": "D8"}
    assert parse_params(["max_step=2", "a=1.5,b=x"]) == {"max_step": 2, "a": 1.5, "b": "x"}
    with pytest.raises(ConfigError):
        parse_params(["moveset"])

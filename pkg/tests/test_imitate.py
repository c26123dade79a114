from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import traj
from feasim import (
    ScoreConfig,
    build_trajectory_fmdp,
    expected_return,
    fit_weighted_bc,
    generate_demos,
    id_feas_weights,
    make_env,
    recover_action,
    rollout,
    score_trajectory,
    scripted_expert,
    transition_sampling_distribution,
    uniform_weights,
    value_iteration,
)
from feasim.errors import DegenerateDistributionError, EmptyInputError
from feasim.feasibility import WeightedTransitionSet, feasibility
from feasim.imitate import ImitatorPolicy, id_feas_raw_reward, id_feas_records

E, N, W, S = range(4)


# -- recover_action -------------------------------------------------------------


def test_recover_action_examples(i4):
    rec = recover_action(i4, (0.0, 0.0), (1.0, 0.0))
    assert (rec.best_action, rec.residual, rec.achieved) == (E, 0.0, (1.0, 0.0))
    rec = recover_action(i4, (0.0, 0.0), (1.0, 1.0))
    assert (rec.best_action, rec.residual) == (E, 1.0)
    rec = recover_action(i4, (4.0, 4.0), (5.0, 4.0))
    assert (rec.best_action, rec.achieved, rec.residual) == (E, (4.0, 4.0), 1.0)


point = st.tuples(st.integers(0, 4), st.integers(0, 4)).map(lambda p: (float(p[0]), float(p[1])))


@given(point, point, st.sampled_from(["I4", "D8", "DJ"]), st.sampled_from(["L1", "L2"]))
def test_recover_action_invariants(s, target, moveset, metric):
    env = make_env("grid", {"moveset": moveset})
    rec = recover_action(env, s, target, metric)
    assert rec.achieved == env.transition(s, rec.best_action)
    feasible = [a for a in range(env.n_actions) if env.transition(s, a) == target]
    assert (rec.residual == 0.0) == bool(feasible)
    if feasible:
        assert rec.best_action == feasible[0]


# -- policies ---------------------------------------------------------------------


def test_single_feasible_demo_replays_exactly(i4):
    (xi,) = generate_demos(i4, scripted_expert(i4), 1, seed=5)
    policy = fit_weighted_bc(uniform_weights([xi]), i4, batch=64, iters=20, seed=0)
    replay, _ = rollout(i4, policy, xi.states[0], len(xi) - 1)
    assert replay.states == xi.states


def test_ours_on_polluted_grid_matches_expert_return(grid):
    i4, dj = grid("I4"), grid("DJ")
    expert_return, _ = expected_return(i4, scripted_expert(i4), 100)
    for seed in range(5):
        related = generate_demos(i4, scripted_expert(i4), 10, seed=seed, demonstrator_id=0)
        unrelated = generate_demos(dj, scripted_expert(dj), 100, seed=seed, demonstrator_id=1, first_trajectory_id=10)
        raws = {}
        for group in (related, unrelated):
            f = build_trajectory_fmdp(group, i4)
            policy, _ = value_iteration(f)
            raws.update({xi.trajectory_id: score_trajectory(policy, f, xi) for xi in group})
        demos = related + unrelated
        recs = feasibility(raws, ScoreConfig(), {xi.trajectory_id: xi.demonstrator_id for xi in demos})
        learned = fit_weighted_bc(transition_sampling_distribution(demos, recs), i4, seed=seed)
        assert expected_return(i4, learned, 100, seed=seed)[0] == expert_return


def test_fit_is_deterministic(grid):
    dj = grid("DJ")
    demos = generate_demos(dj, scripted_expert(dj), 20, seed=0)
    wts = uniform_weights(demos)
    assert fit_weighted_bc(wts, grid("I4"), seed=4) == fit_weighted_bc(wts, grid("I4"), seed=4)


def test_fit_rejects_degenerate_distribution(i4):
    wts = uniform_weights([traj([(0, 0), (1, 0)])])
    bad = WeightedTransitionSet(wts.entries, wts.p_w * 0.5)
    with pytest.raises(DegenerateDistributionError):
        fit_weighted_bc(bad, i4)


def test_weighted_majority_vote(i4):
    # two demos leave (0,0) in different directions; the heavier one wins the vote
    demos = [traj([(0, 0), (1, 0)], 0), traj([(0, 0), (0, 1)], 1)]
    for raws, expected in (({0: -5.0, 1: 0.0}, N), ({0: 0.0, 1: -5.0}, E)):
        recs = feasibility(raws, ScoreConfig(sigma=1.0))
        policy = fit_weighted_bc(transition_sampling_distribution(demos, recs), i4, batch=1000, iters=1, seed=0)
        assert policy((0.0, 0.0)) == expected


def test_nearest_state_fallback():
    policy = ImitatorPolicy({(0.0, 0.0): 1, (2.0, 0.0): 2, (0.0, 2.0): 3})
    assert policy((0.0, 0.0)) == 1
    assert policy((0.0, 0.5)) == 1
    # (1.5,1.5) is equidistant from (2,0) and (0,2); the lexicographically smaller (0,2) wins
    assert policy((1.5, 1.5)) == 3
    # (1,1) also ties with (0,0), which is smaller still
    assert policy((1.0, 1.0)) == 1
    assert policy((3.0, 0.0)) == 2
    with pytest.raises(EmptyInputError):
        ImitatorPolicy({})


def test_imitator_policy_json(tmp_path):
    policy = ImitatorPolicy({(0.0, 0.0): 1, (2.0, 0.5): 2}, "L1")
    path = tmp_path / "pi.json"
    policy.save(path)
    assert ImitatorPolicy.load(path) == policy


# -- baselines ----------------------------------------------------------------------


def test_uniform_weights_examples():
    a, b = traj([(0, 0), (1, 0), (2, 0), (3, 0)], 0), traj([(0, 0), (0, 1)], 1)
    wts = uniform_weights([a, b])
    assert wts.p_w.tolist() == [0.25] * 4
    ref = transition_sampling_distribution([a, b], feasibility({0: -1.0, 1: -1.0}))
    assert ref.p_w.tolist() == wts.p_w.tolist()


def test_id_feas_examples(grid, xi_diag):
    i4 = grid("I4")
    feasible = generate_demos(i4, scripted_expert(i4), 3, seed=0)
    recs = id_feas_records(feasible, i4)
    assert all(r.weight == 1.0 and r.raw_reward == 0.0 for r in recs)
    raw = id_feas_raw_reward(xi_diag, i4)
    assert raw <= oracles.XI_DIAG_RAW + 1e-12
    assert raw == pytest.approx(oracles.greedy_tracking(i4, xi_diag.states), abs=1e-12)


def test_id_feas_under_scores_the_jump_demo(i4):
    xi = traj(oracles.XI_JUMP)
    f = build_trajectory_fmdp([xi], i4)
    policy, _ = value_iteration(f)
    ours = score_trajectory(policy, f, xi)
    assert ours == pytest.approx(oracles.best_tracking(i4, xi.states), abs=1e-12)
    assert id_feas_raw_reward(xi, i4) < ours


def test_pointmass_pocket_demo():
    pm = make_env("pointmass", {"max_step": 1})
    pocket = traj(oracles.XI_POCKET, 1)
    f = build_trajectory_fmdp([pocket], pm)
    policy, _ = value_iteration(f)
    ours = score_trajectory(policy, f, pocket)
    greedy = id_feas_raw_reward(pocket, pm)
    assert ours == pytest.approx(oracles.best_tracking(pm, pocket.states), abs=1e-12)
    assert greedy == pytest.approx(oracles.greedy_tracking(pm, pocket.states), abs=1e-12)
    assert ours > greedy + 5.0

    s, path = pocket.states[0], [pocket.states[0]]
    for target in pocket.states[1:]:
        s = recover_action(pm, s, target).achieved
        path.append(s)
    assert path == [tuple(map(float, p)) for p in oracles.XI_POCKET_GREEDY_PATH]

    # a feasible companion demo fixes C = 0; with a common sigma, ID-Feas weighs the pocket demo lower
    feasible = traj([(0, 3), (1, 4), (2, 5), (3, 6)], 2)
    cfg = ScoreConfig(sigma=1.0)
    w_ours = feasibility({1: ours, 2: 0.0}, cfg)[0].weight
    w_id = id_feas_records([pocket, feasible], pm, cfg)[0].weight
    assert w_id < w_ours
    assert w_ours == pytest.approx(math.exp(ours), rel=1e-12)


def _test_corpus():
    envs = {m: make_env("grid", {"moveset": m}) for m in ("I4", "D8", "DJ")}
    corpus = []
    for k, m in enumerate(envs):
        corpus += generate_demos(envs[m], scripted_expert(envs[m]), 8, seed=k, first_trajectory_id=100 * k)
    corpus += [traj(oracles.XI_JUMP, 900), traj([(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)], 901)]
    return envs["I4"], corpus


def test_dominance_over_test_corpus():
    i4, corpus = _test_corpus()
    for xi in corpus:
        f = build_trajectory_fmdp([xi], i4)
        policy, _ = value_iteration(f)
        assert score_trajectory(policy, f, xi) >= id_feas_raw_reward(xi, i4) - 1e-12
    pm1, pm2 = make_env("pointmass", {"max_step": 1}), make_env("pointmass", {"max_step": 2})
    for xi in generate_demos(pm2, scripted_expert(pm2), 10, seed=0) + [traj(oracles.XI_POCKET, 99)]:
        f = build_trajectory_fmdp([xi], pm1)
        policy, _ = value_iteration(f)
        assert score_trajectory(policy, f, xi) >= id_feas_raw_reward(xi, pm1) - 1e-12


@given(st.integers(0, 2**16))
def test_feasible_corpus_gives_identical_policies(seed):
    i4 = make_env("grid", {"moveset": "I4"})
    demos = generate_demos(i4, scripted_expert(i4), 6, seed=seed)
    f = build_trajectory_fmdp(demos, i4)
    policy, _ = value_iteration(f)
    ours = feasibility({xi.trajectory_id: score_trajectory(policy, f, xi) for xi in demos})
    sets = [
        transition_sampling_distribution(demos, ours),
        id_feas_weights(demos, i4),
        uniform_weights(demos),
    ]
    fitted = [fit_weighted_bc(w, i4, batch=16, iters=5, seed=seed) for w in sets]
    assert fitted[0] == fitted[1] == fitted[2]

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mexrl.core import EpisodicMDP, Policy, ZeroSumMG, initial_value, policy_evaluation
from mexrl.planner import (GAP_TOL, bellman_optimality_backup, best_response_value_iteration,
                           max_response_value_iteration, ne_value_iteration, plan_optimal,
                           solve_matrix_game)

from conftest import (all_deterministic, eval_deterministic_mdp, eval_deterministic_pair,
                      lp_game_value, random_mdp, random_mg)


def test_last_step_backup_is_reward(rng):
    env = random_mdp(rng, 3, 2, 2)
    assert np.array_equal(bellman_optimality_backup(None, env, 1), env.rewards[1])


def test_unit_reward_optimal_q(rng):
    H = 4
    env = EpisodicMDP(rng.dirichlet(np.ones(3), size=(H, 3, 2)), np.ones((H, 3, 2)))
    Q = plan_optimal(env)[0].Q
    for h in range(H):
        assert np.allclose(Q[h], H - h)


def test_two_by_two_by_two_matches_all_sixteen_policies(rng):
    env = random_mdp(rng, 2, 2, 2)
    acts = all_deterministic(2, 2, 2)
    assert len(acts) == 16
    assert plan_optimal(env)[0].V[0, 0] == pytest.approx(eval_deterministic_mdp(env, acts).max(), abs=1e-12)


def test_single_action_equals_evaluation(rng):
    env = random_mdp(rng, 3, 1, 3)
    only = Policy(np.ones((3, 3, 1)))
    assert np.allclose(plan_optimal(env)[0].V, policy_evaluation(env, only).V)


def test_random_instance_matches_enumeration(rng):
    env = random_mdp(rng, 3, 2, 3)
    best = eval_deterministic_mdp(env, all_deterministic(3, 3, 2)).max()
    vt, pi = plan_optimal(env)
    assert abs(vt.V[0, 0] - best) <= 1e-10
    assert abs(initial_value(env, policy_evaluation(env, pi).V) - best) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3), st.integers(1, 4))
def test_fixed_point_and_bounds(seed, S, A, H):
    env = random_mdp(np.random.default_rng(seed), S, A, H)
    vt, _ = plan_optimal(env)
    for h in range(H):
        q_next = None if h == H - 1 else vt.Q[h + 1]
        assert np.max(np.abs(bellman_optimality_backup(q_next, env, h) - vt.Q[h])) < 1e-10
        assert vt.V[h].min() >= 0 and vt.V[h].max() <= H - h + 1e-12


# -- matrix games ------------------------------------------------------------

def test_one_by_one():
    sol = solve_matrix_game([[0.7]])
    assert sol.value == 0.7
    assert sol.row_strategy.tolist() == [1.0] and sol.col_strategy.tolist() == [1.0]


def test_rock_paper_scissors_exactly_uniform():
    rps = np.array([[0, -1, 1], [1, 0, -1], [-1, 1, 0]], dtype=float)
    sol = solve_matrix_game(rps)
    assert sol.value == 0.0
    assert np.array_equal(sol.row_strategy, np.full(3, 1 / 3))
    assert np.array_equal(sol.col_strategy, np.full(3, 1 / 3))


def test_known_two_by_two():
    sol = solve_matrix_game([[3, 1], [0, 2]])
    assert sol.value == pytest.approx(1.5, abs=1e-12)
    assert np.allclose(sol.row_strategy, [0.5, 0.5], atol=1e-12)
    assert np.allclose(sol.col_strategy, [0.25, 0.75], atol=1e-12)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        solve_matrix_game([[1.0, np.nan], [0.0, 1.0]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7), st.integers(1, 7))
def test_random_games_certified_and_match_lp(seed, m, n):
    M = np.random.default_rng(seed).normal(size=(m, n))
    sol = solve_matrix_game(M)
    assert sol.duality_gap <= GAP_TOL
    assert sol.value == pytest.approx(lp_game_value(M), abs=1e-7)
    assert sol.row_strategy.min() >= 0 and sol.row_strategy.sum() == pytest.approx(1.0)


def test_degenerate_games_with_ties():
    for M in (np.zeros((3, 3)), np.ones((2, 4)), np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1.0]])):
        assert solve_matrix_game(M).duality_gap <= GAP_TOL


# -- Markov games ------------------------------------------------------------

def test_horizon_one_is_per_state_matrix_game(rng):
    env = random_mg(rng, 3, 2, 3, 1)
    V = ne_value_iteration(env)[0].V
    for s in range(3):
        assert V[0, s] == pytest.approx(lp_game_value(env.rewards[0, s]), abs=1e-9)


def test_dummy_min_player_reduces_to_mdp(rng):
    mdp = random_mdp(rng, 3, 2, 3)
    mg = ZeroSumMG(np.asarray(mdp.transitions)[:, :, :, None, :], np.asarray(mdp.rewards)[..., None])
    assert np.allclose(ne_value_iteration(mg)[0].V, plan_optimal(mdp)[0].V, atol=1e-12)
    mu = Policy(rng.dirichlet(np.ones(2), size=(3, 3)))
    br = best_response_value_iteration(mg, mu)[0].V
    assert np.allclose(br, policy_evaluation(mdp, mu).V, atol=1e-12)


def test_ne_matches_normal_form_enumeration(rng):
    env = random_mg(rng, 3, 2, 2, 2)
    mus = all_deterministic(2, 3, 2)
    nus = all_deterministic(2, 3, 2)
    table = np.array([[eval_deterministic_pair(env, m, n) for n in nus] for m in mus])
    assert ne_value_iteration(env)[0].V[0, 0] == pytest.approx(lp_game_value(table), abs=1e-9)


def test_best_response_to_ne_policy_is_ne_value(rng):
    env = random_mg(rng, 3, 3, 2, 3)
    vt, joint = ne_value_iteration(env)
    br = best_response_value_iteration(env, joint.max_policy)[0].V
    assert abs(br[0, 0] - vt.V[0, 0]) <= 1e-8


def test_best_response_is_min_over_deterministic_responses(rng):
    env = random_mg(rng, 3, 2, 2, 2)
    mu = Policy(rng.dirichlet(np.ones(2), size=(2, 3)))
    br, nu = best_response_value_iteration(env, mu)
    brute = min(initial_value(env, policy_evaluation(env, (mu, Policy.deterministic(n, 2))).V)
                for n in all_deterministic(2, 3, 2))
    assert br.V[0, 0] == pytest.approx(brute, abs=1e-12)
    assert initial_value(env, policy_evaluation(env, (mu, nu)).V) == pytest.approx(brute, abs=1e-12)
    assert br.V[0, 0] <= ne_value_iteration(env)[0].V[0, 0] + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_value_sandwich(seed):
    rng = np.random.default_rng(seed)
    env = random_mg(rng, 3, 3, 3, 2)
    v_star = ne_value_iteration(env)[0].V[0, 0]
    mu = Policy(rng.dirichlet(np.ones(3), size=(2, 3)))
    nu = Policy(rng.dirichlet(np.ones(3), size=(2, 3)))
    assert best_response_value_iteration(env, mu)[0].V[0, 0] <= v_star + 1e-8
    assert max_response_value_iteration(env, nu)[0].V[0, 0] >= v_star - 1e-8


def test_ne_outputs_are_bounded_and_policies_valid(rng):
    env = random_mg(rng, 4, 3, 4, 3)
    vt, joint = ne_value_iteration(env)
    for h in range(3):
        assert vt.V[h].min() >= -1e-12 and vt.V[h].max() <= 3 - h + 1e-12
    assert np.allclose(joint.max_policy.probs.sum(-1), 1)
    assert np.allclose(joint.min_policy.probs.sum(-1), 1)

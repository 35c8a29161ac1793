import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mexrl.core import EpisodicMDP, Episode, Policy, Transition, sample_episode
from mexrl.diagnostics import occupancy
from mexrl.hypothesis import (HypothesisClass, ModelBasedHypothesis, ModelFreeHypothesis,
                              enumerate_tabular_model_class, model_free_class_from_models)
from mexrl.losses import (BellmanLedger, BestResponseLedger, NLLLedger, bellman_residual,
                          discrepancy_modelbased, discrepancy_modelfree, hellinger_rows,
                          hellinger_sq, mg_br_loss, mg_ne_loss, modelbased_nll, modelfree_loss,
                          td_residual)
from mexrl.planner import plan_optimal

from conftest import random_mdp, random_mg


# -- Hellinger ---------------------------------------------------------------

def test_hellinger_known_values():
    assert hellinger_sq([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert hellinger_sq([1, 0], [0, 1]) == 1.0
    assert hellinger_sq([0.5, 0.5], [0.9, 0.1]) == pytest.approx(
        1 - (math.sqrt(0.45) + math.sqrt(0.05)), abs=1e-14)
    assert hellinger_sq([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.10557, abs=1e-5)


def test_hellinger_support_mismatch():
    with pytest.raises(ValueError):
        hellinger_sq([0.5, 0.5], [1 / 3] * 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_hellinger_properties(seed, n):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    d = hellinger_sq(p, q)
    assert 0 <= d <= 1
    assert d == pytest.approx(hellinger_sq(q, p), abs=1e-15)
    assert hellinger_sq(p, p) == 0


# -- model-free losses ---------------------------------------------------------

def test_td_residual_hand_value():
    q = np.zeros((2, 2, 2))
    q[0, 0, 0] = 2.0
    q[1, 1] = [0.5, 0.25]
    f = ModelFreeHypothesis(q)
    assert td_residual(f, Transition(0, 0, 0, None, 1.0, 1)) == pytest.approx(0.5)


def test_td_residual_zero_cases(rng):
    f = ModelFreeHypothesis(np.zeros((2, 2, 2)))
    assert td_residual(f, Transition(0, 1, 1, None, 0.0, 0)) == 0.0
    P = np.zeros((3, 3, 2, 3))
    P[..., 0] = 1.0
    env = EpisodicMDP(P, rng.random((3, 3, 2)))
    f = ModelFreeHypothesis(plan_optimal(env)[0].Q)
    ep = sample_episode(env, Policy.uniform(3, 3, 2), rng)
    assert all(abs(td_residual(f, d)) < 1e-12 for d in ep)


def _episode(states, actions, rewards, min_actions=None):
    return Episode(np.array(states), np.array(actions), np.array(rewards, dtype=float),
                   None if min_actions is None else np.array(min_actions))


def test_modelfree_loss_empty_and_singleton(rng):
    f = ModelFreeHypothesis(rng.random((2, 3, 2)))
    cls = HypothesisClass((f,))
    assert modelfree_loss(f, [], cls, 0) == 0.0
    eps = [_episode([0, 1, 2], [0, 1], [0.2, 0.4]), _episode([1, 2, 0], [1, 0], [0.1, 0.0])]
    assert modelfree_loss(f, eps, cls, 0) == 0.0


def test_modelfree_loss_two_members_hand_sum():
    qf = np.zeros((2, 2, 2))
    qg = np.zeros((2, 2, 2))
    qf[0] = [[1.0, 0.5], [0.2, 0.0]]
    qf[1] = [[0.3, 0.9], [0.6, 0.1]]
    qg[0] = [[0.4, 0.8], [1.5, 0.3]]
    qg[1] = [[0.0, 0.2], [0.7, 0.7]]
    f, g = ModelFreeHypothesis(qf), ModelFreeHypothesis(qg)
    cls = HypothesisClass((f, g))
    eps = [_episode([0, 1, 0], [0, 1], [0.5, 0.0]),
           _episode([1, 0, 1], [0, 0], [0.1, 0.2]),
           _episode([0, 0, 1], [1, 1], [0.0, 1.0])]
    # step 0 data: (x=0,a=0,r=.5,x'=1), (1,0,.1,0), (0,1,0,0); V_{1,f} = (0.9, 0.6)
    vf = {0: 0.9, 1: 0.6}
    data = [(0, 0, 0.5, 1), (1, 0, 0.1, 0), (0, 1, 0.0, 0)]
    own = sum((qf[0, x, a] - r - vf[xn]) ** 2 for x, a, r, xn in data)
    other = sum((qg[0, x, a] - r - vf[xn]) ** 2 for x, a, r, xn in data)
    assert modelfree_loss(f, eps, cls, 0) == pytest.approx(own - min(own, other), abs=1e-14)
    ledger = BellmanLedger(cls)
    for ep in eps:
        ledger.update(ep)
    for h in range(2):
        for i, m in enumerate(cls):
            assert ledger.values[h, i] == pytest.approx(modelfree_loss(m, eps, cls, h), abs=1e-12)


def test_bellman_ledger_matches_reference_and_is_nonnegative(rng):
    env = random_mdp(rng, 3, 2, 3)
    cls = model_free_class_from_models(enumerate_tabular_model_class(env, 6, seed=1), env)
    ledger = BellmanLedger(cls)
    eps = [sample_episode(env, Policy.uniform(3, 3, 2), rng) for _ in range(12)]
    for ep in eps:
        ledger.update(ep)
    ref = np.array([[modelfree_loss(m, eps, cls, h) for m in cls] for h in range(3)])
    assert np.allclose(ledger.values, ref, atol=1e-10)
    assert ledger.values.min() >= -1e-12
    assert ledger.k == 12


def test_mg_losses_match_reference(rng):
    env = random_mg(rng, 2, 2, 2, 2)
    cls = model_free_class_from_models(enumerate_tabular_model_class(env, 2, seed=0), env)
    joint = (Policy.uniform(2, 2, 2), Policy.uniform(2, 2, 2))
    eps = [sample_episode(env, joint, rng) for _ in range(2)]
    # two transitions at step 0, brute-force sums
    f, g = cls[0], cls[1]
    for h in range(2):
        data = [ep.transition(h) for ep in eps]
        sums = [sum((m.q[h, d.x, d.a, d.b] - d.r - f.values[h + 1, d.x_next]) ** 2 for d in data)
                for m in cls]
        assert mg_ne_loss(f, eps, cls, h) == pytest.approx(sums[0] - min(sums), abs=1e-12)
    mu = cls[1].max_policy
    br = BestResponseLedger(cls)
    for ep in eps:
        br.update(ep)
    for h in range(2):
        data = [ep.transition(h) for ep in eps]
        target = g.br_values(mu)
        sums = [sum((m.q[h, d.x, d.a, d.b] - d.r - target[h + 1, d.x_next]) ** 2 for d in data)
                for m in cls]
        assert mg_br_loss(g, mu, eps, cls, h) == pytest.approx(sums[1] - min(sums), abs=1e-12)
        assert br.values(1)[h, 1] == pytest.approx(sums[1] - min(sums), abs=1e-12)
    single = HypothesisClass((f,))
    assert mg_br_loss(f, mu, eps, single, 0) == 0.0
    assert mg_ne_loss(f, [], cls, 0) == 0.0


def test_best_response_ledger_lazy_equals_eager(rng):
    env = random_mg(rng, 2, 2, 2, 2)
    cls = model_free_class_from_models(enumerate_tabular_model_class(env, 4, seed=0), env)
    joint = (Policy.uniform(2, 2, 2), Policy.uniform(2, 2, 2))
    eager, lazy = BestResponseLedger(cls), BestResponseLedger(cls)
    for key in range(4):
        eager.values(key)
    for _ in range(5):
        ep = sample_episode(env, joint, rng)
        eager.update(ep)
        lazy.update(ep)
    for key in range(4):
        assert np.allclose(eager.values(key), lazy.values(key), atol=1e-12)


# -- model-based losses -------------------------------------------------------

def test_nll_zero_for_deterministic_matching_model():
    P = np.zeros((2, 2, 1, 2))
    P[:, 0, 0, 1] = P[:, 1, 0, 0] = 1.0
    m = ModelBasedHypothesis(P, np.zeros((2, 2, 1)))
    ep = _episode([0, 1, 0], [0, 0], [0, 0])
    assert modelbased_nll(m, [ep], 0) == pytest.approx(0.0, abs=1e-10)


def test_nll_uniform_model():
    m = ModelBasedHypothesis(np.full((1, 4, 1, 4), 0.25), np.zeros((1, 4, 1)))
    eps = [_episode([s, (s + 1) % 4], [0], [0]) for s in range(4)] * 3
    assert modelbased_nll(m, eps, 0) == pytest.approx(12 * math.log(4), abs=1e-12)


def test_nll_difference_is_log_likelihood_ratio(rng):
    env = random_mdp(rng, 3, 2, 2)
    cls = enumerate_tabular_model_class(env, 2, seed=0)
    eps = [sample_episode(env, Policy.uniform(2, 3, 2), rng) for _ in range(20)]
    lik = [[np.prod([m.transitions[h, d.x, d.a, d.x_next] for ep in eps for d in [ep.transition(h)]])
            for h in range(2)] for m in cls]
    for h in range(2):
        diff = modelbased_nll(cls[0], eps, h) - modelbased_nll(cls[1], eps, h)
        assert diff == pytest.approx(math.log(lik[1][h] / lik[0][h]), rel=1e-9)
    ledger = NLLLedger(cls)
    for ep in eps:
        ledger.update(ep)
    ref = np.array([[modelbased_nll(m, eps, h) for m in cls] for h in range(2)])
    assert np.allclose(ledger.values, ref, rtol=1e-12)


def test_nll_unchanged_by_certain_transitions():
    P = np.zeros((1, 2, 1, 2))
    P[0, 0, 0] = [0.0, 1.0]
    P[0, 1, 0] = [0.5, 0.5]
    m = ModelBasedHypothesis(P, np.zeros((1, 2, 1)))
    base = [_episode([1, 0], [0], [0])]
    assert modelbased_nll(m, base + [_episode([0, 1], [0], [0])], 0) == \
        pytest.approx(modelbased_nll(m, base, 0), abs=1e-11)


def test_nll_ledger_for_games(rng):
    env = random_mg(rng, 2, 2, 3, 2)
    cls = enumerate_tabular_model_class(env, 3, seed=0)
    ep = sample_episode(env, (Policy.uniform(2, 2, 2), Policy.uniform(2, 2, 3)), rng)
    ledger = NLLLedger(cls)
    ledger.update(ep)
    ref = np.array([[modelbased_nll(m, [ep], h) for m in cls] for h in range(2)])
    assert np.allclose(ledger.values, ref)


# -- discrepancies -----------------------------------------------------------

def test_discrepancies_vanish_at_truth(rng):
    env = random_mdp(rng, 3, 2, 3)
    f = ModelFreeHypothesis(plan_optimal(env)[0].Q)
    m = ModelBasedHypothesis(env.transitions, env.rewards)
    dist = rng.dirichlet(np.ones(6)).reshape(3, 2)
    for h in range(3):
        assert discrepancy_modelfree(f, env, h, dist) == pytest.approx(0.0, abs=1e-20)
        assert discrepancy_modelbased(m, env, h, dist) == pytest.approx(0.0, abs=1e-10)


def test_point_mass_and_uniform_discrepancy(rng):
    env = random_mdp(rng, 3, 2, 2)
    other = enumerate_tabular_model_class(env, 2, seed=5)
    m = [x for i, x in enumerate(other) if i != other.true_index][0]
    f = ModelFreeHypothesis(np.clip(plan_optimal(m.as_env())[0].Q, 0, None))
    point = np.zeros((3, 2))
    point[1, 0] = 1.0
    res = f.q[0, 1, 0] - env.rewards[0, 1, 0] - env.transitions[0, 1, 0] @ f.values[1]
    assert discrepancy_modelfree(f, env, 0, point) == pytest.approx(res ** 2, abs=1e-14)
    assert discrepancy_modelbased(m, env, 0, point) == pytest.approx(
        hellinger_sq(m.transitions[0, 1, 0], env.transitions[0, 1, 0]), abs=1e-14)
    uniform = np.full((3, 2), 1 / 6)
    loop = np.mean([hellinger_sq(m.transitions[1, s, a], env.transitions[1, s, a])
                    for s in range(3) for a in range(2)])
    assert discrepancy_modelbased(m, env, 1, uniform) == pytest.approx(loop, abs=1e-14)


def test_modelfree_discrepancy_matches_monte_carlo_residual():
    rng = np.random.default_rng(8)
    env = random_mdp(rng, 3, 2, 2)
    f = ModelFreeHypothesis(rng.random((2, 3, 2)) * 2)
    pi = Policy.uniform(2, 3, 2)
    dist = occupancy(env, pi)[1]
    exact = discrepancy_modelfree(f, env, 1, dist)
    # estimate E_{(x,a)}[(E_{x'} residual)^2] by nested sampling of the inner expectation
    eps = [sample_episode(env, pi, rng) for _ in range(4000)]
    sq = []
    for ep in eps:
        d = ep.transition(1)
        inner = f.q[1, d.x, d.a] - env.rewards[1, d.x, d.a] - \
            env.transitions[1, d.x, d.a] @ f.values[2]
        sq.append(inner ** 2)
    sq = np.array(sq)
    assert abs(sq.mean() - exact) <= 3 * sq.std(ddof=1) / np.sqrt(len(sq))

"""Independent oracles shared by the test modules.

Nothing here calls the planner: values are obtained by brute-force policy
enumeration and a plain LP for normal-form games.
"""
import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from mexrl.core import EpisodicMDP, ZeroSumMG


def random_mdp(rng, S, A, H, x1=0):
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    r = rng.random((H, S, A))
    return EpisodicMDP(P, r, x1)


def random_mg(rng, S, A, B, H, x1=0):
    P = rng.dirichlet(np.ones(S), size=(H, S, A, B))
    r = rng.random((H, S, A, B))
    return ZeroSumMG(P, r, x1)


def all_deterministic(H, S, A):
    """Every deterministic Markov policy as an (N, H, S) integer array."""
    return np.array(list(itertools.product(range(A), repeat=H * S))).reshape(-1, H, S)


def eval_deterministic_mdp(env, acts):
    """V_1(x_1) of each deterministic policy in ``acts`` by an explicit loop."""
    P, r = np.asarray(env.transitions), np.asarray(env.rewards)
    H, S = env.horizon, env.n_states
    out = np.empty(len(acts))
    for n, pol in enumerate(acts):
        V = np.zeros(S)
        for h in reversed(range(H)):
            V = np.array([r[h, s, pol[h, s]] + P[h, s, pol[h, s]] @ V for s in range(S)])
        out[n] = V[env.initial_state]
    return out


def eval_deterministic_pair(env, mu, nu):
    P, r = np.asarray(env.transitions), np.asarray(env.rewards)
    V = np.zeros(env.n_states)
    for h in reversed(range(env.horizon)):
        V = np.array([r[h, s, mu[h, s], nu[h, s]] + P[h, s, mu[h, s], nu[h, s]] @ V
                      for s in range(env.n_states)])
    return V[env.initial_state]


def lp_game_value(M):
    """max_x min_j x^T M[:, j] via a direct LP (independent of the package solver)."""
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-M.T, np.ones((n, 1))])
    A_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * m + [(None, None)], method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    return -res.fun


def mc_value(env, policy, n, seed):
    from mexrl.core import sample_episode
    rng = np.random.default_rng(seed)
    returns = np.array([sample_episode(env, policy, rng).total_return for _ in range(n)])
    return returns.mean(), returns.std(ddof=1) / np.sqrt(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

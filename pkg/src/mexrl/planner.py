"""Exact dynamic-programming oracles for MDP and zero-sum MG models."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import JointPolicy, Policy, ValueTable

GAP_TOL = 1e-8


@dataclass(frozen=True)
class MatrixGameSolution:
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    value: float
    duality_gap: float


def bellman_optimality_backup(q_next, model, h: int) -> np.ndarray:
    """One backup of the optimality operator at step ``h``.

    ``q_next`` is the (S, A) Q-slice of step h+1, or ``None`` at the last step.
    """
    v_next = np.zeros(model.n_states) if q_next is None else np.max(q_next, axis=-1)
    return model.rewards[h] + model.transitions[h] @ v_next


def greedy(q: np.ndarray) -> np.ndarray:
    """One-hot argmax over the last axis with lowest-index tie-break."""
    return np.eye(q.shape[-1])[np.argmax(q, axis=-1)]


def plan_optimal(model) -> tuple[ValueTable, Policy]:
    """Optimal values and the greedy optimal policy of an MDP model."""
    H, S, A = model.horizon, model.n_states, model.n_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = model.rewards[h] + model.transitions[h] @ V[h + 1]
        V[h] = Q[h].max(axis=-1)
    return ValueTable(V, Q), Policy(greedy(Q))


# -- matrix games ------------------------------------------------------------

def _gap(M, x, y) -> float:
    return float(np.max(M @ y) - np.min(x @ M))


def _pure_best(values: np.ndarray, maximize: bool) -> int:
    # argmax/argmin return the lowest index on ties
    return int(np.argmax(values) if maximize else np.argmin(values))


def _solve_two_rows(M: np.ndarray):
    """Max-min row mix for a 2 x B game by enumerating breakpoints of the lower envelope."""
    d = M[0] - M[1]
    candidates = {0.0, 1.0}
    B = M.shape[1]
    for i, j in itertools.combinations(range(B), 2):
        denom = d[i] - d[j]
        if denom != 0.0:
            p = (M[1, j] - M[1, i]) / denom
            if 0.0 < p < 1.0:
                candidates.add(float(p))
    best_p, best_v = None, -np.inf
    for p in sorted(candidates):
        v = float(np.min(p * M[0] + (1.0 - p) * M[1]))
        if v > best_v + 1e-15:
            best_p, best_v = p, v
    x = np.array([best_p, 1.0 - best_p])
    # column side: a pure column or a pair equalizing both rows
    best_y, best_u = None, np.inf
    for b in range(B):
        u = float(np.max(M[:, b]))
        if u < best_u - 1e-15:
            best_u, best_y = u, np.eye(B)[b]
    for i, j in itertools.combinations(range(B), 2):
        c = M[:, i] - M[:, j]
        if c[0] != c[1]:
            q = (M[1, j] - M[0, j]) / (c[0] - c[1])
            if 0.0 < q < 1.0:
                y = np.zeros(B)
                y[i], y[j] = q, 1.0 - q
                u = float(np.max(M @ y))
                if u < best_u - 1e-15:
                    best_u, best_y = u, y
    return x, best_y


def _lp_row(M: np.ndarray) -> np.ndarray:
    """Max-min row strategy via the standard LP (maximize v s.t. M^T x >= v)."""
    A, B = M.shape
    c = np.zeros(A + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-M.T, np.ones((B, 1))])
    A_eq = np.hstack([np.ones((1, A)), np.zeros((1, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(B), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * A + [(None, None)], method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"matrix game LP failed: {res.message}")
    x = np.clip(res.x[:A], 0.0, None)
    return x / x.sum()


def _polish(M: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Re-solve the equalizer system on the detected supports."""
    sx = np.flatnonzero(x > 1e-9)
    sy = np.flatnonzero(y > 1e-9)
    if len(sx) != len(sy):
        return x, y
    k = len(sx)
    sub = M[np.ix_(sx, sy)]
    # rows: sub^T x_s - v = 0 ; sum x_s = 1
    lhs = np.zeros((k + 1, k + 1))
    lhs[:k, :k] = sub.T
    lhs[:k, k] = -1.0
    lhs[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    lhs_y = lhs.copy()
    lhs_y[:k, :k] = sub
    try:
        sol_x = np.linalg.solve(lhs, rhs)
        sol_y = np.linalg.solve(lhs_y, rhs)
    except np.linalg.LinAlgError:
        return x, y
    if sol_x[:k].min() < 0 or sol_y[:k].min() < 0:
        return x, y
    px, py = np.zeros_like(x), np.zeros_like(y)
    px[sx], py[sy] = sol_x[:k], sol_y[:k]
    if _gap(M, px, py) <= _gap(M, x, y):
        return px, py
    return x, y


def solve_matrix_game(M) -> MatrixGameSolution:
    """Mixed equilibrium of the zero-sum game where the row player maximizes ``x^T M y``.

    Games with at most two rows or columns are solved by support enumeration,
    larger ones by linear programming followed by support polishing.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("payoff must be a nonempty 2-D matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("payoff matrix has non-finite entries")
    A, B = M.shape
    if A == 1:
        x = np.ones(1)
        y = np.eye(B)[_pure_best(M[0], maximize=False)]
    elif B == 1:
        x = np.eye(A)[_pure_best(M[:, 0], maximize=True)]
        y = np.ones(1)
    elif A == 2:
        x, y = _solve_two_rows(M)
    elif B == 2:
        y, x = _solve_two_rows(-M.T)
    else:
        x = _lp_row(M)
        y = _lp_row(-M.T)
        x, y = _polish(M, x, y)
    gap = _gap(M, x, y)
    value = float(x @ M @ y)
    if gap > GAP_TOL:
        raise RuntimeError(f"matrix game solution not certified (gap {gap:.3e})")
    return MatrixGameSolution(x, y, value, max(gap, 0.0))


# -- Markov games ------------------------------------------------------------

def ne_value_iteration(model) -> tuple[ValueTable, JointPolicy]:
    """NE values Q*, V* and an equilibrium joint policy of a zero-sum MG model."""
    H, S, A, B = model.horizon, model.n_states, model.n_actions, model.n_min_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A, B))
    mu = np.zeros((H, S, A))
    nu = np.zeros((H, S, B))
    for h in range(H - 1, -1, -1):
        Q[h] = model.rewards[h] + model.transitions[h] @ V[h + 1]
        for s in range(S):
            sol = solve_matrix_game(Q[h, s])
            V[h, s] = sol.value
            mu[h, s] = sol.row_strategy
            nu[h, s] = sol.col_strategy
    return ValueTable(V, Q), JointPolicy(Policy(mu), Policy(nu))


def best_response_value_iteration(model, mu: Policy) -> tuple[ValueTable, Policy]:
    """Min-player best response to a fixed max-player policy ``mu``.

    Pure responses suffice since the inner objective is linear in the
    min-player's mixed strategy.
    """
    H, S, A, B = model.horizon, model.n_states, model.n_actions, model.n_min_actions
    if mu.probs.shape != (H, S, A):
        raise ValueError("max-player policy does not match the model")
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A, B))
    nu = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q[h] = model.rewards[h] + model.transitions[h] @ V[h + 1]
        payoff = np.einsum("sa,sab->sb", mu.probs[h], Q[h])
        nu[h] = np.argmin(payoff, axis=-1)
        V[h] = payoff[np.arange(S), nu[h]]
    return ValueTable(V, Q), Policy(np.eye(B)[nu])


def max_response_value_iteration(model, nu: Policy) -> tuple[ValueTable, Policy]:
    """Max-player best response to a fixed min-player policy ``nu``."""
    H, S, A, B = model.horizon, model.n_states, model.n_actions, model.n_min_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A, B))
    mu = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q[h] = model.rewards[h] + model.transitions[h] @ V[h + 1]
        payoff = np.einsum("sab,sb->sa", Q[h], nu.probs[h])
        mu[h] = np.argmax(payoff, axis=-1)
        V[h] = payoff[np.arange(S), mu[h]]
    return ValueTable(V, Q), Policy(np.eye(A)[mu])

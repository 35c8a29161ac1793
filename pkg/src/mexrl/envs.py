"""Seeded environment generators: random tabular MDPs/MGs, linear mixture MGs, a noisy gridworld."""
from __future__ import annotations

import numpy as np

from .core import ConfigurationError, EpisodicMDP, ZeroSumMG
from .hypothesis import HypothesisClass, ModelBasedHypothesis

# up, right, down, left as (row, col) offsets
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
# repo convention: the obstacle is only drawn in a figure, so its exact cells are our choice
DEFAULT_OBSTACLE = tuple((r, c) for r in (4, 5) for c in (4, 5, 6))


def make_random_tabular_mdp(n_states: int, n_actions: int, horizon: int, seed: int,
                            sparsity: float = 0.3) -> EpisodicMDP:
    """Dirichlet(1) transition rows; a ``sparsity`` fraction of (h, s, a) pays reward 1."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(horizon, n_states, n_actions))
    n_cells = horizon * n_states * n_actions
    r = np.zeros(n_cells)
    r[rng.choice(n_cells, size=int(round(sparsity * n_cells)), replace=False)] = 1.0
    return EpisodicMDP(P, r.reshape(horizon, n_states, n_actions), 0,
                       metadata={"generator": "random_mdp", "seed": seed, "sparsity": sparsity})


def make_random_tabular_mg(n_states: int, n_actions: int, n_min_actions: int, horizon: int,
                           seed: int) -> ZeroSumMG:
    """Dirichlet(1) transition rows and uniform [0, 1] rewards."""
    rng = np.random.default_rng(seed)
    shape = (horizon, n_states, n_actions, n_min_actions)
    P = rng.dirichlet(np.ones(n_states), size=shape)
    r = rng.random(shape)
    return ZeroSumMG(P, r, 0, metadata={"generator": "random_mg", "seed": seed})


def make_linear_mixture_mg(d: int, n_states: int, n_actions: int, n_min_actions: int,
                           horizon: int, seed: int, max_tries: int = 100):
    """Zero-sum MG whose kernel is ``phi_h(x,a,b,x')^T theta*``.

    Features are d base kernels scaled by 1/sqrt(d), so ``||phi|| <= 1``, and
    ``theta* = sqrt(d) * w`` with ``w`` on the simplex, so ``||theta*|| <= sqrt(d)``.
    Returns ``(env, features, theta_star)`` with features of shape (H, S, A, B, S, d).
    """
    if d < 1:
        raise ConfigurationError("feature dimension must be at least 1")
    rng = np.random.default_rng(seed)
    shape = (horizon, n_states, n_actions, n_min_actions)
    for _ in range(max_tries):
        base = rng.dirichlet(np.ones(n_states), size=shape + (d,))  # (..., d, S')
        phi = np.moveaxis(base, -2, -1) / np.sqrt(d)
        theta = np.sqrt(d) * rng.dirichlet(np.ones(d))
        P = phi @ theta
        if P.min() >= 0 and np.max(np.abs(P.sum(axis=-1) - 1.0)) <= 1e-12:
            break
    else:
        raise ConfigurationError("could not draw a valid linear mixture kernel")
    r = rng.random(shape)
    env = ZeroSumMG(P, r, 0, metadata={"generator": "linear_mixture_mg", "seed": seed, "d": d})
    return env, phi, theta


def canonical_features(env) -> np.ndarray:
    """d = 1 features reproducing ``env``'s own kernel with theta = 1."""
    return np.asarray(env.transitions)[..., None]


# -- gridworld ---------------------------------------------------------------

def _gridworld_kernel(size: int, noise: float, obstacles, goal) -> np.ndarray:
    n_cells = size * size
    S = n_cells + 1  # last state: absorbing post-goal sink
    sink = n_cells
    blocked = {r * size + c for r, c in obstacles}
    goal_state = goal[0] * size + goal[1]
    P = np.zeros((S, len(MOVES), S))
    P[sink, :, sink] = 1.0
    for s in range(n_cells):
        if s == goal_state:
            P[s, :, sink] = 1.0
            continue
        if s in blocked:
            P[s, :, s] = 1.0
            continue
        r, c = divmod(s, size)
        neighbours = []
        for dr, dc in MOVES:
            rr, cc = r + dr, c + dc
            inside = 0 <= rr < size and 0 <= cc < size
            neighbours.append(rr * size + cc if inside and rr * size + cc not in blocked else None)
        feasible = [n for n in neighbours if n is not None]
        for a, target in enumerate(neighbours):
            P[s, a, s if target is None else target] += 1.0 - noise
            if feasible:
                for n in feasible:
                    P[s, a, n] += noise / len(feasible)
            else:
                P[s, a, s] += noise
    return P


def make_gridworld(size: int = 10, horizon: int = 200, noise: float = 0.2,
                   obstacles=DEFAULT_OBSTACLE, start=(0, 0), goal=None,
                   step_reward: float = 0.001, goal_reward: float = 10.0,
                   reward_scale: float = 12.0) -> EpisodicMDP:
    """Noisy gridworld navigation task as a finite-horizon MDP.

    Cells are states ``row * size + col``; one extra absorbing state follows
    the goal so the goal bonus is paid once. With probability ``noise`` the
    move goes to a uniformly random feasible neighbour; moves into walls or
    obstacles leave the agent in place. Rewards are divided by
    ``reward_scale`` to stay in [0, 1].
    """
    goal = (size - 1, size - 1) if goal is None else tuple(goal)
    obstacles = tuple(tuple(o) for o in obstacles)
    if goal in obstacles or tuple(start) in obstacles:
        raise ConfigurationError("start and goal must not be obstacles")
    if (step_reward + goal_reward) / reward_scale > 1.0:
        raise ConfigurationError("reward scale too small for rewards in [0, 1]")
    P = _gridworld_kernel(size, noise, obstacles, goal)
    S = P.shape[0]
    r = np.full((S, len(MOVES)), step_reward / reward_scale)
    r[goal[0] * size + goal[1]] = (step_reward + goal_reward) / reward_scale
    meta = {"generator": "gridworld", "size": size, "noise": noise, "goal": list(goal),
            "start": list(start), "obstacles": [list(o) for o in obstacles],
            "reward_scale": reward_scale, "step_reward": step_reward, "goal_reward": goal_reward}
    return EpisodicMDP(P, np.broadcast_to(r, (horizon, S, len(MOVES))),
                       start[0] * size + start[1], metadata=meta)


def gridworld_layouts(size: int = 10, goal=None) -> dict:
    """Alternative obstacle layouts used as competing hypotheses.

    Three keep the goal reachable, three cut it off; ``"true"`` is the default layout.
    """
    goal = (size - 1, size - 1) if goal is None else tuple(goal)
    base = list(DEFAULT_OBSTACLE)
    row_wall = [(size - 3, c) for c in range(size)]
    col_wall = [(r, size - 3) for r in range(size)]
    around_goal = [(goal[0] + dr, goal[1] + dc) for dr, dc in MOVES
                   if 0 <= goal[0] + dr < size and 0 <= goal[1] + dc < size]
    return {
        "true": base,
        "open": [],
        "row_wall_gap": base + row_wall[:-1],
        "col_wall_gap": base + col_wall[:-1],
        "walled_goal": base + around_goal,
        "row_wall": base + row_wall,
        "col_wall": base + col_wall,
    }


def gridworld_model_class(env: EpisodicMDP, noises=(0.1, 0.2, 0.3), seed: int = 0) -> HypothesisClass:
    """Finite model class of gridworld kernels over layouts and noise levels.

    The true kernel is inserted explicitly; member order is shuffled from ``seed``.
    """
    meta = env.metadata
    size, goal = meta["size"], tuple(meta["goal"])
    true_kernel = np.asarray(env.transitions[0])
    kernels, names = [true_kernel], ["true-kernel"]
    for name, layout in gridworld_layouts(size, goal).items():
        for noise in noises:
            P = _gridworld_kernel(size, noise, layout, goal)
            if np.array_equal(P, true_kernel):
                continue
            kernels.append(P)
            names.append(f"{name}/noise={noise}")
    order = np.random.default_rng(seed).permutation(len(kernels))
    members = tuple(ModelBasedHypothesis(kernels[i], env.rewards, env.initial_state) for i in order)
    return HypothesisClass(members, int(np.flatnonzero(order == 0)[0]), False,
                           {"recipe": "gridworld_layouts", "names": [names[i] for i in order],
                            "seed": seed})

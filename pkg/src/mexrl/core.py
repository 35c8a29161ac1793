"""Tabular environments, policies, trajectories and exact policy evaluation.

Timesteps are 0-based in code: ``h = 0`` is the first step of an episode and
value tables carry an extra all-zero row at ``h = H``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Union

import numpy as np

STOCHASTIC_ATOL = 1e-12


class ConfigurationError(ValueError):
    """Raised when dimensions or parameters do not fit together."""


def _readonly(x: np.ndarray) -> np.ndarray:
    if x.flags.writeable:
        x.flags.writeable = False
    return x


def is_stationary(transitions: np.ndarray) -> bool:
    """True if ``transitions`` is a zero-stride broadcast over the step axis."""
    return transitions.ndim > 0 and transitions.shape[0] > 1 and transitions.strides[0] == 0


def _check_kernel(P: np.ndarray, n_states: int) -> None:
    base = P[0] if is_stationary(P) else P
    if base.shape[-1] != n_states:
        raise ConfigurationError(f"transition rows have length {base.shape[-1]}, expected {n_states}")
    if np.any(base < 0) or not np.all(np.isfinite(base)):
        raise ConfigurationError("transition probabilities must be finite and nonnegative")
    if np.max(np.abs(base.sum(axis=-1) - 1.0)) > STOCHASTIC_ATOL:
        raise ConfigurationError("transition rows must sum to 1")


def _check_rewards(r: np.ndarray) -> None:
    if not np.all(np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
        raise ConfigurationError("rewards must lie in [0, 1]")


def _check_initial(initial_state: int, initial_distribution, n_states: int) -> None:
    if not 0 <= initial_state < n_states:
        raise ConfigurationError(f"initial state {initial_state} out of range")
    if initial_distribution is not None:
        d = np.asarray(initial_distribution)
        if d.shape != (n_states,) or np.any(d < 0) or abs(d.sum() - 1.0) > STOCHASTIC_ATOL:
            raise ConfigurationError("initial distribution must be a distribution over states")


@dataclass(frozen=True, eq=False)
class EpisodicMDP:
    """Finite-horizon MDP with known deterministic rewards.

    ``transitions`` has shape (H, S, A, S) and ``rewards`` shape (H, S, A).
    A stationary kernel may be passed as an (S, A, S) array; it is broadcast
    over the horizon without copying.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    initial_state: int = 0
    initial_distribution: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=float)
        if r.ndim != 3:
            raise ConfigurationError("rewards must have shape (H, S, A)")
        P = np.asarray(self.transitions, dtype=float)
        if P.ndim == 3:
            P = np.broadcast_to(P, (r.shape[0],) + P.shape)
        if P.shape != r.shape + (r.shape[1],):
            raise ConfigurationError(f"transition shape {P.shape} does not match rewards {r.shape}")
        _check_kernel(P, r.shape[1])
        _check_rewards(r)
        _check_initial(self.initial_state, self.initial_distribution, r.shape[1])
        object.__setattr__(self, "transitions", _readonly(P))
        object.__setattr__(self, "rewards", _readonly(r))
        if self.initial_distribution is not None:
            object.__setattr__(self, "initial_distribution",
                               _readonly(np.asarray(self.initial_distribution, dtype=float)))

    is_game = False

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[2]

    @property
    def action_shape(self) -> tuple:
        return (self.n_actions,)


@dataclass(frozen=True, eq=False)
class ZeroSumMG:
    """Two-player zero-sum episodic Markov game.

    ``transitions`` has shape (H, S, A, B, S) and ``rewards`` (H, S, A, B);
    the max-player picks from A, the min-player from B.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    initial_state: int = 0
    initial_distribution: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=float)
        if r.ndim != 4:
            raise ConfigurationError("rewards must have shape (H, S, A, B)")
        P = np.asarray(self.transitions, dtype=float)
        if P.ndim == 4:
            P = np.broadcast_to(P, (r.shape[0],) + P.shape)
        if P.shape != r.shape + (r.shape[1],):
            raise ConfigurationError(f"transition shape {P.shape} does not match rewards {r.shape}")
        _check_kernel(P, r.shape[1])
        _check_rewards(r)
        _check_initial(self.initial_state, self.initial_distribution, r.shape[1])
        object.__setattr__(self, "transitions", _readonly(P))
        object.__setattr__(self, "rewards", _readonly(r))
        if self.initial_distribution is not None:
            object.__setattr__(self, "initial_distribution",
                               _readonly(np.asarray(self.initial_distribution, dtype=float)))

    is_game = True

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[2]

    @property
    def n_min_actions(self) -> int:
        return self.rewards.shape[3]

    @property
    def action_shape(self) -> tuple:
        return (self.n_actions, self.n_min_actions)


Environment = Union[EpisodicMDP, ZeroSumMG]


@dataclass(frozen=True, eq=False)
class Policy:
    """Markov policy; ``probs[h, s]`` is a distribution over actions."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3:
            raise ConfigurationError("policy table must have shape (H, S, A)")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=-1) - 1.0)) > STOCHASTIC_ATOL:
            raise ConfigurationError("policy rows must be distributions")
        object.__setattr__(self, "probs", _readonly(p))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_actions)[actions])

    @classmethod
    def uniform(cls, horizon: int, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((horizon, n_states, n_actions), 1.0 / n_actions))

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[2]


class JointPolicy(NamedTuple):
    """Pair (mu, nu) for the max- and min-player."""

    max_policy: Policy
    min_policy: Policy


@dataclass(frozen=True, eq=False)
class ValueTable:
    """``V`` has shape (H+1, S) with ``V[H] = 0``; ``Q`` has shape (H, S, *actions)."""

    V: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", _readonly(np.asarray(self.V, dtype=float)))
        object.__setattr__(self, "Q", _readonly(np.asarray(self.Q, dtype=float)))


class Transition(NamedTuple):
    """A single step ``(h, x, a, b, r, x_next)``; ``b`` is ``None`` for MDPs."""

    h: int
    x: int
    a: int
    b: Optional[int]
    r: float
    x_next: int


@dataclass(frozen=True, eq=False)
class Episode:
    """One trajectory of length H.

    ``states`` has H+1 entries; ``explore_step`` is the 0-based step whose
    action was drawn uniformly (V-type exploration) or -1.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    min_actions: Optional[np.ndarray] = None
    mode: str = "q"
    explore_step: int = -1

    def __post_init__(self):
        for name in ("states", "actions", "rewards", "min_actions"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _readonly(np.asarray(v)))
        if len(self.states) != len(self.actions) + 1 or len(self.rewards) != len(self.actions):
            raise ConfigurationError("episode arrays have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_return(self) -> float:
        return float(np.sum(self.rewards))

    def transition(self, h: int) -> Transition:
        b = None if self.min_actions is None else int(self.min_actions[h])
        return Transition(h, int(self.states[h]), int(self.actions[h]), b,
                          float(self.rewards[h]), int(self.states[h + 1]))

    def __iter__(self) -> Iterator[Transition]:
        return (self.transition(h) for h in range(len(self)))


def check_episode(env: Environment, episode: Episode) -> None:
    if len(episode) != env.horizon:
        raise ConfigurationError("episode length differs from horizon")
    if episode.states.min() < 0 or episode.states.max() >= env.n_states:
        raise ConfigurationError("state index out of range")
    if episode.actions.min() < 0 or episode.actions.max() >= env.n_actions:
        raise ConfigurationError("action index out of range")
    if env.is_game and (episode.min_actions is None or episode.min_actions.max() >= env.n_min_actions):
        raise ConfigurationError("min-player actions missing or out of range")
    if np.any(episode.rewards < 0) or np.any(episode.rewards > 1):
        raise ConfigurationError("rewards out of [0, 1]")


def _check_policy(policy: Policy, env: Environment, n_actions: int) -> None:
    if policy.probs.shape != (env.horizon, env.n_states, n_actions):
        raise ConfigurationError(
            f"policy shape {policy.probs.shape} does not match environment "
            f"{(env.horizon, env.n_states, n_actions)}")


def _draw(cdf_row: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf_row, u, side="right")), len(cdf_row) - 1)


def sample_episode(env: Environment, policy, rng: np.random.Generator,
                   *, mode: str = "q", explore_step: int = -1) -> Episode:
    """Roll out one episode.

    Exactly ``H * 3 (+1)`` uniforms are consumed per episode regardless of the
    environment kind, so an MG with a single min-action reproduces the MDP
    trajectory for the same generator state.
    """
    if env.is_game:
        mu, nu = policy
        _check_policy(mu, env, env.n_actions)
        _check_policy(nu, env, env.n_min_actions)
    else:
        if isinstance(policy, tuple):
            raise ConfigurationError("MDP episodes take a single policy")
        _check_policy(policy, env, env.n_actions)
        mu = policy
    H = env.horizon
    start_u = rng.random() if env.initial_distribution is not None else None
    u = rng.random((H, 3))
    if start_u is None:
        x = env.initial_state
    else:
        x = _draw(np.cumsum(env.initial_distribution), start_u)
    states = np.empty(H + 1, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    min_actions = np.empty(H, dtype=np.int64) if env.is_game else None
    rewards = np.empty(H)
    states[0] = x
    for h in range(H):
        a = _draw(np.cumsum(mu.probs[h, x]), u[h, 0])
        actions[h] = a
        if env.is_game:
            b = _draw(np.cumsum(nu.probs[h, x]), u[h, 1])
            min_actions[h] = b
            row = env.transitions[h, x, a, b]
            rewards[h] = env.rewards[h, x, a, b]
        else:
            row = env.transitions[h, x, a]
            rewards[h] = env.rewards[h, x, a]
        x = _draw(np.cumsum(row), u[h, 2])
        states[h + 1] = x
    return Episode(states, actions, rewards, min_actions, mode=mode, explore_step=explore_step)


def policy_evaluation(env: Environment, policy) -> ValueTable:
    """Exact V and Q of a (joint) Markov policy by backward recursion."""
    H, S = env.horizon, env.n_states
    V = np.zeros((H + 1, S))
    if env.is_game:
        mu, nu = policy
        _check_policy(mu, env, env.n_actions)
        _check_policy(nu, env, env.n_min_actions)
        Q = np.zeros((H, S, env.n_actions, env.n_min_actions))
        for h in range(H - 1, -1, -1):
            Q[h] = env.rewards[h] + env.transitions[h] @ V[h + 1]
            V[h] = np.einsum("sa,sab,sb->s", mu.probs[h], Q[h], nu.probs[h])
    else:
        _check_policy(policy, env, env.n_actions)
        Q = np.zeros((H, S, env.n_actions))
        for h in range(H - 1, -1, -1):
            Q[h] = env.rewards[h] + env.transitions[h] @ V[h + 1]
            V[h] = np.einsum("sa,sa->s", policy.probs[h], Q[h])
    return ValueTable(V, Q)


def initial_value(env: Environment, V: np.ndarray) -> float:
    """Value at the start of an episode (fixed state or start distribution)."""
    if env.initial_distribution is not None:
        return float(env.initial_distribution @ V[0])
    return float(V[0, env.initial_state])


# -- serialization -----------------------------------------------------------

def env_to_dict(env: Environment) -> dict:
    stationary = is_stationary(env.transitions)
    P = env.transitions[0] if stationary else env.transitions
    doc = {
        "kind": "mg" if env.is_game else "mdp",
        "horizon": env.horizon,
        "n_states": env.n_states,
        "n_actions": env.n_actions,
        "initial_state": int(env.initial_state),
        "stationary": bool(stationary),
        "transitions": np.ascontiguousarray(P).ravel().tolist(),
        "rewards": np.ascontiguousarray(env.rewards).ravel().tolist(),
        "metadata": env.metadata,
    }
    if env.is_game:
        doc["n_min_actions"] = env.n_min_actions
    if env.initial_distribution is not None:
        doc["initial_distribution"] = env.initial_distribution.tolist()
    return doc


def env_from_dict(doc: dict) -> Environment:
    H, S, A = doc["horizon"], doc["n_states"], doc["n_actions"]
    acts = (A, doc["n_min_actions"]) if doc["kind"] == "mg" else (A,)
    p_shape = ((S,) if doc.get("stationary") else (H, S)) + acts + (S,)
    P = np.asarray(doc["transitions"], dtype=float).reshape(p_shape)
    r = np.asarray(doc["rewards"], dtype=float).reshape((H, S) + acts)
    cls = ZeroSumMG if doc["kind"] == "mg" else EpisodicMDP
    init = doc.get("initial_distribution")
    return cls(P, r, int(doc["initial_state"]),
               None if init is None else np.asarray(init, dtype=float),
               dict(doc.get("metadata", {})))


def dump_env(env: Environment, path) -> None:
    Path(path).write_text(json.dumps(env_to_dict(env)))


def load_env(path) -> Environment:
    return env_from_dict(json.loads(Path(path).read_text()))

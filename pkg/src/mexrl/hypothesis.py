"""Finite hypothesis classes: Q-function families and transition-kernel families."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import (ConfigurationError, EpisodicMDP, Environment, Policy, ZeroSumMG,
                   _readonly, env_from_dict, env_to_dict, is_stationary)
from .planner import (best_response_value_iteration, greedy, ne_value_iteration,
                      plan_optimal, solve_matrix_game)

P_FLOOR = 1e-12


class KindError(TypeError):
    """Operation not defined for this kind of hypothesis."""


def floor_kernel(P: np.ndarray, floor: float = P_FLOOR) -> np.ndarray:
    """Clip rows below ``floor`` and renormalize. Broadcast (stationary) kernels stay broadcast."""
    if is_stationary(P):
        base = floor_kernel(np.asarray(P[0]), floor)
        return np.broadcast_to(base, P.shape)
    if P.min() >= floor * (1.0 - 1e-6):
        return P
    out = np.maximum(P, floor)
    return out / out.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ModelFreeHypothesis:
    """A candidate optimal Q-function (MDP) or NE Q-function (MG).

    Values are bounded in [0, B_f] with ``B_f = H``. ``initial_state`` is
    carried so the hypothesis can report ``V_{1,f}(x_1)`` on its own.
    """

    q: np.ndarray
    initial_state: int = 0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim not in (3, 4):
            raise ConfigurationError("Q table must have shape (H, S, A) or (H, S, A, B)")
        H = q.shape[0]
        if not np.all(np.isfinite(q)) or q.min() < -1e-12 or q.max() > H + 1e-9:
            raise ConfigurationError(f"Q values must lie in [0, {H}]")
        object.__setattr__(self, "q", _readonly(q))

    @property
    def is_game(self) -> bool:
        return self.q.ndim == 4

    @property
    def horizon(self) -> int:
        return self.q.shape[0]

    @property
    def n_states(self) -> int:
        return self.q.shape[1]

    @property
    def bound(self) -> float:
        return float(self.horizon)

    @cached_property
    def _solved(self):
        H, S = self.q.shape[:2]
        V = np.zeros((H + 1, S))
        if not self.is_game:
            V[:H] = self.q.max(axis=-1)
            return V, None
        mu = np.zeros((H, S, self.q.shape[2]))
        for h in range(H):
            for s in range(S):
                sol = solve_matrix_game(self.q[h, s])
                V[h, s] = sol.value
                mu[h, s] = sol.row_strategy
        return _readonly(V), Policy(mu)

    @property
    def values(self) -> np.ndarray:
        """V_{h,f}: max over actions (MDP) or matrix-game value (MG); row H is zero."""
        return self._solved[0]

    @property
    def initial_value(self) -> float:
        return float(self.values[0, self.initial_state])

    @property
    def max_policy(self) -> Policy:
        """NE max-player policy mu_f (MG only)."""
        if not self.is_game:
            raise KindError("max_policy is defined for Markov-game hypotheses")
        return self._solved[1]

    def br_values(self, mu: Policy) -> np.ndarray:
        """V^{mu,dagger}_{h,f}(x) = min_b sum_a mu_h(a|x) Q_{h,f}(x,a,b), with a zero row H."""
        if not self.is_game:
            raise KindError("best-response values are defined for Markov-game hypotheses")
        H, S = self.q.shape[:2]
        V = np.zeros((H + 1, S))
        V[:H] = np.einsum("hsa,hsab->hsb", mu.probs, self.q).min(axis=-1)
        return V

    def br_policy(self, mu: Policy) -> Policy:
        payoff = np.einsum("hsa,hsab->hsb", mu.probs, self.q)
        return Policy(np.eye(self.q.shape[3])[np.argmin(payoff, axis=-1)])


def greedy_policy_of(f: ModelFreeHypothesis) -> Policy:
    """Deterministic argmax policy of an MDP Q-hypothesis (lowest index on ties)."""
    if f.is_game:
        raise KindError("Markov-game policies come from NE / best-response solves")
    return Policy(greedy(f.q))


@dataclass(frozen=True, eq=False)
class ModelBasedHypothesis:
    """A candidate transition kernel paired with the known rewards.

    Rows are floored at ``P_FLOOR`` and renormalized so log-likelihoods stay finite.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    initial_state: int = 0

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=float)
        P = np.asarray(self.transitions, dtype=float)
        if P.ndim == r.ndim:
            P = np.broadcast_to(P, (r.shape[0],) + P.shape)
        if P.shape != r.shape + (r.shape[1],):
            raise ConfigurationError("kernel shape does not match rewards")
        base = P[0] if is_stationary(P) else P
        if np.any(base < 0) or np.max(np.abs(base.sum(axis=-1) - 1.0)) > 1e-9:
            raise ConfigurationError("kernel rows must be distributions")
        object.__setattr__(self, "transitions", _readonly(floor_kernel(P)))
        object.__setattr__(self, "rewards", _readonly(r))

    @property
    def is_game(self) -> bool:
        return self.rewards.ndim == 4

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
        return self.rewards.shape[2:]

    initial_distribution = None

    def as_env(self) -> Environment:
        cls = ZeroSumMG if self.is_game else EpisodicMDP
        return cls(self.transitions, self.rewards, self.initial_state)

    @cached_property
    def solution(self):
        """``plan_optimal`` (MDP) or ``ne_value_iteration`` (MG) of this model, cached."""
        return ne_value_iteration(self) if self.is_game else plan_optimal(self)

    @property
    def values(self) -> np.ndarray:
        return self.solution[0].V

    @property
    def initial_value(self) -> float:
        return float(self.values[0, self.initial_state])

    @property
    def max_policy(self) -> Policy:
        if not self.is_game:
            raise KindError("max_policy is defined for Markov-game models")
        return self.solution[1].max_policy

    @property
    def greedy_policy(self) -> Policy:
        if self.is_game:
            raise KindError("greedy_policy is defined for MDP models")
        return self.solution[1]

    def br_values(self, mu: Policy) -> np.ndarray:
        return best_response_value_iteration(self, mu)[0].V

    def br_policy(self, mu: Policy) -> Policy:
        return best_response_value_iteration(self, mu)[1]


Hypothesis = Union[ModelFreeHypothesis, ModelBasedHypothesis]


@dataclass(frozen=True, eq=False)
class HypothesisClass:
    """Ordered finite class; members are addressed by their integer index everywhere."""

    members: tuple
    true_index: Optional[int] = None
    truncated: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ConfigurationError("hypothesis class is empty")
        kinds = {type(m) for m in members}
        if len(kinds) != 1:
            raise ConfigurationError("hypothesis class mixes model-free and model-based members")
        if len({m.is_game for m in members}) != 1:
            raise ConfigurationError("hypothesis class mixes MDP and MG members")
        if self.true_index is not None and not 0 <= self.true_index < len(members):
            raise ConfigurationError("true index out of range")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]

    def __iter__(self):
        return iter(self.members)

    @property
    def kind(self) -> str:
        return "model_based" if isinstance(self.members[0], ModelBasedHypothesis) else "model_free"

    @property
    def is_game(self) -> bool:
        return self.members[0].is_game

    @property
    def horizon(self) -> int:
        return self.members[0].horizon

    @property
    def true_member(self):
        if self.true_index is None:
            raise ConfigurationError("class has no flagged true hypothesis")
        return self.members[self.true_index]

    def initial_values(self) -> np.ndarray:
        return np.array([m.initial_value for m in self.members])



def completeness_report(cls: HypothesisClass, env: Environment, atol: float = 1e-9) -> dict:
    """Fraction of (member, step) pairs whose optimality backup lands back in the class.

    Only meaningful for model-free MDP classes; the property is reported, not enforced.
    """
    if cls.kind != "model_free" or cls.is_game:
        raise KindError("completeness is checked for model-free MDP classes")
    H = cls.horizon
    closed = total = 0
    for h in range(H - 1):
        components = np.stack([m.q[h] for m in cls])
        for m in cls:
            target = env.rewards[h] + env.transitions[h] @ m.q[h + 1].max(axis=-1)
            total += 1
            closed += bool(np.any(np.max(np.abs(components - target), axis=(1, 2)) <= atol))
    return {"pairs": total, "closed": closed, "fraction": closed / total if total else 1.0}


def _perturbed_kernel(P: np.ndarray, rng: np.random.Generator, magnitude: float) -> np.ndarray:
    noise = rng.dirichlet(np.ones(P.shape[-1]), size=P.shape[:-1])
    return (1.0 - magnitude) * P + magnitude * noise


def _snap_rows(P: np.ndarray, resolution: int) -> np.ndarray:
    """Round each row to multiples of 1/resolution keeping the sum (largest remainder)."""
    scaled = P * resolution
    base = np.floor(scaled)
    short = (resolution - base.sum(axis=-1)).astype(int)
    order = np.argsort(-(scaled - base), axis=-1, kind="stable")
    ranks = np.argsort(order, axis=-1, kind="stable")
    base += ranks < short[..., None]
    return base / resolution


def enumerate_tabular_model_class(env: Environment, n_models: int, *, magnitude: float = 0.5,
                                  grid: Optional[int] = None, seed: int = 0,
                                  size_cap: int = 1024) -> HypothesisClass:
    """Realizable finite model class around ``env``.

    The true kernel is inserted explicitly; the other members mix it with
    random Dirichlet rows (weight ``magnitude``) and, if ``grid`` is given,
    snap rows to multiples of ``1/grid``. Duplicates are removed and member
    order is shuffled deterministically from ``seed``.
    """
    if size_cap < 1:
        raise ConfigurationError("size_cap must be at least 1")
    truncated = n_models > size_cap
    if truncated:
        warnings.warn(f"class size {n_models} exceeds cap {size_cap}; truncating")
        n_models = size_cap
    rng = np.random.default_rng(seed)
    P_true = np.asarray(env.transitions)
    kernels = [P_true]
    seen = {np.ascontiguousarray(P_true).tobytes()}
    attempts = 0
    while len(kernels) < n_models and attempts < 20 * n_models:
        attempts += 1
        P = _perturbed_kernel(np.array(P_true), rng, magnitude)
        if grid is not None:
            P = _snap_rows(P, grid)
        key = np.ascontiguousarray(P).tobytes()
        if key in seen:
            continue
        seen.add(key)
        kernels.append(P)
    order = rng.permutation(len(kernels))
    members = tuple(ModelBasedHypothesis(kernels[i], env.rewards, env.initial_state) for i in order)
    true_index = int(np.flatnonzero(order == 0)[0])
    return HypothesisClass(members, true_index, truncated,
                           {"recipe": "perturbed", "magnitude": magnitude, "grid": grid, "seed": seed})


def model_free_class_from_models(models: HypothesisClass, env: Optional[Environment] = None) -> HypothesisClass:
    """Q-functions obtained by planning in every member of a model class.

    If ``env`` is given the flagged true member is planned in ``env`` itself
    so its Q equals the exact optimal Q of the environment.
    """
    if models.kind != "model_based":
        raise KindError("expected a model-based class")
    members = []
    for i, m in enumerate(models):
        source = env if (env is not None and i == models.true_index) else m
        vt = ne_value_iteration(source)[0] if m.is_game else plan_optimal(source)[0]
        members.append(ModelFreeHypothesis(np.clip(vt.Q, 0.0, None), m.initial_state))
    return HypothesisClass(tuple(members), models.true_index, models.truncated,
                           dict(models.metadata, recipe="planned-from-models"))


def build_linear_mixture_class(features: np.ndarray, thetas: Sequence, rewards: np.ndarray,
                               initial_state: int = 0, true_theta=None,
                               atol: float = 1e-9) -> HypothesisClass:
    """Model class ``P_h = phi_h^T theta`` over a grid of ``theta`` vectors.

    ``features`` has shape (H, S, *actions, S, d); the same ``theta`` is used at
    every step. Grid points giving invalid rows or with ``||theta|| > sqrt(d)``
    are rejected. ``true_theta`` is appended if absent from the grid.
    """
    features = np.asarray(features, dtype=float)
    d = features.shape[-1]
    thetas = [np.asarray(t, dtype=float).reshape(d) for t in thetas]
    if true_theta is not None:
        true_theta = np.asarray(true_theta, dtype=float).reshape(d)
        if not any(np.array_equal(t, true_theta) for t in thetas):
            thetas.append(true_theta)
    members, kept, true_index = [], [], None
    for theta in thetas:
        if np.linalg.norm(theta) > np.sqrt(d) + atol:
            continue
        P = features @ theta
        if P.min() < -atol or np.max(np.abs(P.sum(axis=-1) - 1.0)) > atol:
            continue
        if P.min() < 0:
            P = np.clip(P, 0.0, None)
            P = P / P.sum(axis=-1, keepdims=True)
        if true_theta is not None and np.array_equal(theta, true_theta):
            true_index = len(members)
        members.append(ModelBasedHypothesis(P, rewards, initial_state))
        kept.append(theta.tolist())
    if not members:
        raise ConfigurationError("no grid point yields a valid transition kernel")
    return HypothesisClass(tuple(members), true_index, False,
                           {"recipe": "linear_mixture", "thetas": kept, "rejected": len(thetas) - len(kept)})


def simplex_theta_grid(d: int, resolution: int) -> list:
    """sqrt(d) * w for all w on the simplex lattice with spacing 1/resolution."""
    points = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            points.append(prefix + [remaining])
            return
        for i in range(remaining + 1):
            rec(prefix + [i], remaining - i, slots - 1)

    rec([], resolution, d)
    return [np.sqrt(d) * np.asarray(p, dtype=float) / resolution for p in points]


# -- serialization -----------------------------------------------------------

def class_to_dict(cls: HypothesisClass) -> dict:
    members = []
    for m in cls:
        if isinstance(m, ModelBasedHypothesis):
            stationary = is_stationary(m.transitions)
            P = m.transitions[0] if stationary else m.transitions
            members.append({"stationary": stationary,
                            "transitions": np.ascontiguousarray(P).ravel().tolist()})
        else:
            members.append({"q": np.ascontiguousarray(m.q).ravel().tolist()})
    first = cls[0]
    doc = {"kind": cls.kind, "game": cls.is_game, "true_index": cls.true_index,
           "truncated": cls.truncated, "metadata": cls.metadata, "members": members}
    if cls.kind == "model_based":
        doc["rewards_shape"] = list(first.rewards.shape)
        doc["rewards"] = np.ascontiguousarray(first.rewards).ravel().tolist()
    else:
        doc["q_shape"] = list(first.q.shape)
    doc["initial_state"] = int(first.initial_state)
    return doc


def class_from_dict(doc: dict) -> HypothesisClass:
    x1 = int(doc["initial_state"])
    if doc["kind"] == "model_based":
        r_shape = tuple(doc["rewards_shape"])
        r = np.asarray(doc["rewards"], dtype=float).reshape(r_shape)
        members = []
        for m in doc["members"]:
            S = r_shape[1]
            shape = (r_shape[1:] if m["stationary"] else r_shape) + (S,)
            P = np.asarray(m["transitions"], dtype=float).reshape(shape)
            members.append(ModelBasedHypothesis(P, r, x1))
    else:
        shape = tuple(doc["q_shape"])
        members = [ModelFreeHypothesis(np.asarray(m["q"], dtype=float).reshape(shape), x1)
                   for m in doc["members"]]
    return HypothesisClass(tuple(members), doc["true_index"], doc["truncated"], dict(doc["metadata"]))


def dump_problem(env: Environment, cls: HypothesisClass, path) -> None:
    """Write an environment and its hypothesis class to one JSON document."""
    Path(path).write_text(json.dumps({"env": env_to_dict(env), "class": class_to_dict(cls)}))


def load_problem(path):
    doc = json.loads(Path(path).read_text())
    return env_from_dict(doc["env"]), class_from_dict(doc["class"])

"""Maximize-to-explore: the selection rule and the online loops for MDPs and zero-sum MGs."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .core import (ConfigurationError, Episode, Policy, initial_value, policy_evaluation,
                   sample_episode)
from .hypothesis import HypothesisClass, ModelBasedHypothesis, greedy_policy_of
from .losses import BestResponseLedger, make_ledger
from .planner import best_response_value_iteration, ne_value_iteration, plan_optimal

EXPLORATION_MODES = ("q", "v")


def round_robin(k: int, horizon: int) -> int:
    """0-based step overridden by uniform actions in episode ``k`` (1-based)."""
    return (k - 1) % horizon


@dataclass
class MexConfig:
    episodes: int = 1000
    eta: Optional[float] = None
    exploration: str = "q"
    seed: int = 0
    delta: float = 0.05
    eta_constant: float = 1.0
    kind: Optional[str] = None
    v_schedule: Callable[[int, int], int] = field(default=round_robin, repr=False)

    def __post_init__(self):
        if self.eta is not None and not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if self.exploration not in EXPLORATION_MODES:
            raise ConfigurationError(f"unknown exploration mode {self.exploration!r}")
        if self.episodes < 0:
            raise ConfigurationError("episode budget must be nonnegative")

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("v_schedule")
        d["v_schedule"] = getattr(self.v_schedule, "__name__", "custom")
        return d


@dataclass
class RunLog:
    """Per-episode record of an online run.

    ``losses[k]`` is the ledger snapshot used to select in episode k+1, i.e.
    ``L^{k}`` with k episodes absorbed. ``gaps`` are the exact oracle gaps of
    the predicted (not the exploration) policy.
    """

    selected: np.ndarray
    explore_steps: np.ndarray
    returns: np.ndarray
    gaps: np.ndarray
    objectives: np.ndarray
    losses: np.ndarray
    eta: float
    optimal_value: float
    algorithm: str = "mex"
    exploration: str = "q"
    min_selected: Optional[np.ndarray] = None
    min_objectives: Optional[np.ndarray] = None
    br_values: Optional[np.ndarray] = None
    episodes: list = field(default_factory=list, repr=False)
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.selected)

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.gaps)


# -- theory-shaped step size --------------------------------------------------

def eta_from_theory(d_proxy: float, horizon: int, episodes: int, B: float, log_card: float,
                    delta: float, constant: float = 1.0) -> float:
    """sqrt(d / ((H log(HK/delta) + log|H|) * B * K)), times ``constant``."""
    for name, v in (("d_proxy", d_proxy), ("horizon", horizon), ("episodes", episodes),
                    ("B", B), ("delta", delta)):
        if not v > 0:
            raise ConfigurationError(f"{name} must be positive")
    denom = (horizon * math.log(horizon * episodes / delta) + log_card) * B * episodes
    return constant * math.sqrt(d_proxy / denom)


def complexity_proxy(cls: HypothesisClass, episodes: int) -> float:
    """Stand-in for the eluder coefficient: S^2 |A| H log K, or d H^2 log(HK) for linear mixtures."""
    first = cls[0]
    H = cls.horizon
    log_k = math.log(max(episodes, 2))
    if cls.metadata.get("recipe") == "linear_mixture":
        d = len(cls.metadata["thetas"][0])
        return d * H * H * math.log(H * max(episodes, 2))
    S = first.n_states
    shape = first.q.shape[2:] if cls.kind == "model_free" else first.action_shape
    n_joint = int(np.prod(shape))
    return S * S * n_joint * H * log_k


def default_eta(cls: HypothesisClass, episodes: int, delta: float = 0.05,
                constant: float = 1.0) -> float:
    H = cls.horizon
    B = 1.0 if cls.kind == "model_based" else (2.0 * H) ** 2
    return eta_from_theory(complexity_proxy(cls, episodes), H, max(episodes, 1), B,
                           math.log(len(cls)), delta, constant)


# -- selection ---------------------------------------------------------------

def mex_objective(value, loss_total, eta: float):
    """V_{1,f}(x_1) - eta * sum_h L_h^{k-1}(f); broadcasts over members."""
    return np.asarray(value, dtype=float) - eta * np.asarray(loss_total, dtype=float)


def _argmax_first(scores: np.ndarray) -> int:
    return int(np.argmax(scores))


def mex_select(values, loss_totals, eta: float) -> int:
    """Index maximizing the MEX objective; lowest index wins ties."""
    return _argmax_first(mex_objective(values, loss_totals, eta))


def mex_mg_select_max(ne_values, loss_totals, eta: float) -> int:
    return _argmax_first(mex_objective(ne_values, loss_totals, eta))


def mex_mg_select_min(br_values, loss_totals, eta: float) -> int:
    """argmax of -V^{mu,dagger}_{1,g}(x_1) - eta * sum_h L_{h,mu}(g)."""
    return _argmax_first(-np.asarray(br_values, dtype=float) - eta * np.asarray(loss_totals, dtype=float))


def exploration_policy(policy: Policy, mode: str, k: int,
                       schedule: Callable[[int, int], int] = round_robin) -> tuple[Policy, int]:
    """Q-type: ``policy`` itself. V-type: uniform actions at the scheduled step.

    Returns the policy and the 0-based override step (-1 for Q-type).
    """
    if mode == "q":
        return policy, -1
    if mode != "v":
        raise ConfigurationError(f"unknown exploration mode {mode!r}")
    step = schedule(k, policy.horizon)
    probs = np.array(policy.probs)
    probs[step] = 1.0 / policy.n_actions
    return Policy(probs), step


# -- MDP loop ----------------------------------------------------------------

def predicted_policy(member) -> Policy:
    if isinstance(member, ModelBasedHypothesis):
        return member.greedy_policy
    return greedy_policy_of(member)


class _GapOracle:
    """Memoized exact gaps V*(x1) - V^{pi_f}(x1) per member index."""

    def __init__(self, env, cls):
        self.env = env
        self.cls = cls
        self.optimal = initial_value(env, plan_optimal(env)[0].V)
        self._cache: dict[int, float] = {}

    def __call__(self, i: int) -> float:
        if i not in self._cache:
            vt = policy_evaluation(self.env, predicted_policy(self.cls[i]))
            self._cache[i] = self.optimal - initial_value(self.env, vt.V)
        return self._cache[i]


def _check_class(env, cls: HypothesisClass, cfg: MexConfig, game: bool) -> None:
    if cls.is_game != game or env.is_game != game:
        raise ConfigurationError("environment and class kinds do not match the loop")
    if cfg.kind is not None and cfg.kind != cls.kind:
        raise ConfigurationError(f"config expects a {cfg.kind} class, got {cls.kind}")
    if cls.horizon != env.horizon:
        raise ConfigurationError("class horizon differs from environment horizon")
    if cls.true_index is None:
        warnings.warn("hypothesis class has no flagged true member; realizability unchecked")


def run_mex_mdp(env, cls: HypothesisClass, cfg: MexConfig) -> RunLog:
    """Online MEX on an episodic MDP (model-free or model-based class)."""
    _check_class(env, cls, cfg, game=False)
    K, H, M = cfg.episodes, env.horizon, len(cls)
    eta = cfg.eta if cfg.eta is not None else default_eta(cls, K, cfg.delta, cfg.eta_constant)
    rng = np.random.default_rng(cfg.seed)
    ledger = make_ledger(cls)
    values = cls.initial_values()
    gap_of = _GapOracle(env, cls)
    policies: dict[int, Policy] = {}

    selected = np.zeros(K, dtype=np.int64)
    explore_steps = np.full(K, -1, dtype=np.int64)
    returns, gaps, objectives = np.zeros(K), np.zeros(K), np.zeros(K)
    losses = np.zeros((K, H, M))
    episodes: list[Episode] = []
    for k in range(1, K + 1):
        snapshot = ledger.values
        losses[k - 1] = snapshot
        totals = snapshot.sum(axis=0)
        i = mex_select(values, totals, eta)
        if i not in policies:
            policies[i] = predicted_policy(cls[i])
        pi_exp, step = exploration_policy(policies[i], cfg.exploration, k, cfg.v_schedule)
        ep = sample_episode(env, pi_exp, rng, mode=cfg.exploration, explore_step=step)
        ledger.update(ep)
        episodes.append(ep)
        selected[k - 1] = i
        explore_steps[k - 1] = step
        returns[k - 1] = ep.total_return
        gaps[k - 1] = gap_of(i)
        objectives[k - 1] = values[i] - eta * totals[i]
    return RunLog(selected, explore_steps, returns, gaps, objectives, losses, eta,
                  gap_of.optimal, "mex", cfg.exploration, episodes=episodes, config=cfg.echo())


# -- Markov game loop ---------------------------------------------------------

class _MinPlayerCache:
    """Best-response values/policies of every member against each mu_f, built lazily."""

    def __init__(self, cls: HypothesisClass, max_policies):
        self.cls = cls
        self.max_policies = max_policies
        self._values: dict[int, np.ndarray] = {}
        self._policies: dict[tuple, Policy] = {}

    def values(self, i: int) -> np.ndarray:
        if i not in self._values:
            mu = self.max_policies[i]
            self._values[i] = np.array([g.br_values(mu)[0, g.initial_state] for g in self.cls])
        return self._values[i]

    def policy(self, g: int, i: int) -> Policy:
        if (g, i) not in self._policies:
            self._policies[(g, i)] = self.cls[g].br_policy(self.max_policies[i])
        return self._policies[(g, i)]


def run_mex_mg(env, cls: HypothesisClass, cfg: MexConfig) -> RunLog:
    """Online MEX-MG self-play: max-player by NE value, min-player by best-response value."""
    _check_class(env, cls, cfg, game=True)
    K, H, M = cfg.episodes, env.horizon, len(cls)
    eta = cfg.eta if cfg.eta is not None else default_eta(cls, K, cfg.delta, cfg.eta_constant)
    rng = np.random.default_rng(cfg.seed)
    ledger = make_ledger(cls)
    br_ledger = BestResponseLedger(cls) if cls.kind == "model_free" else None
    ne_values = cls.initial_values()
    max_policies = [m.max_policy for m in cls]
    min_cache = _MinPlayerCache(cls, max_policies)
    v_star = initial_value(env, ne_value_iteration(env)[0].V)
    true_br: dict[int, float] = {}

    selected = np.zeros(K, dtype=np.int64)
    min_selected = np.zeros(K, dtype=np.int64)
    returns, gaps = np.zeros(K), np.zeros(K)
    objectives, min_objectives, br_vals = np.zeros(K), np.zeros(K), np.zeros(K)
    losses = np.zeros((K, H, M))
    episodes: list[Episode] = []
    for k in range(1, K + 1):
        snapshot = ledger.values
        losses[k - 1] = snapshot
        totals = snapshot.sum(axis=0)
        i = mex_mg_select_max(ne_values, totals, eta)
        mu = max_policies[i]
        min_totals = totals if br_ledger is None else br_ledger.totals(i)
        bv = min_cache.values(i)
        g = mex_mg_select_min(bv, min_totals, eta)
        nu = min_cache.policy(g, i)
        ep = sample_episode(env, (mu, nu), rng)
        ledger.update(ep)
        if br_ledger is not None:
            br_ledger.update(ep)
        episodes.append(ep)
        if i not in true_br:
            true_br[i] = initial_value(env, best_response_value_iteration(env, mu)[0].V)
        selected[k - 1], min_selected[k - 1] = i, g
        returns[k - 1] = ep.total_return
        br_vals[k - 1] = true_br[i]
        gaps[k - 1] = v_star - true_br[i]
        objectives[k - 1] = ne_values[i] - eta * totals[i]
        min_objectives[k - 1] = -bv[g] - eta * min_totals[g]
    return RunLog(selected, np.full(K, -1, dtype=np.int64), returns, gaps, objectives, losses, eta,
                  v_star, "mex-mg", "q", min_selected, min_objectives, br_vals,
                  episodes, cfg.echo())

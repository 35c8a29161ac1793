"""Estimation losses, discrepancy functions and incremental loss ledgers.

The free functions (``modelfree_loss``, ``modelbased_nll``, ...) scan the
whole history and serve as the reference; the ledgers keep running sums and
are what the online loops use.
"""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Episode, Transition
from .hypothesis import HypothesisClass, ModelBasedHypothesis, ModelFreeHypothesis


def hellinger_sq(p, q) -> float:
    """Squared Hellinger distance 1/2 * sum (sqrt p - sqrt q)^2, in [0, 1]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"distributions have different supports: {p.shape} vs {q.shape}")
    return float(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))


def hellinger_rows(P, Q) -> np.ndarray:
    """Row-wise squared Hellinger distance over the last axis."""
    return 0.5 * np.sum((np.sqrt(P) - np.sqrt(Q)) ** 2, axis=-1)


def _q_at(f: ModelFreeHypothesis, d: Transition) -> float:
    idx = (d.h, d.x, d.a) if d.b is None else (d.h, d.x, d.a, d.b)
    return float(f.q[idx])


def td_residual(f: ModelFreeHypothesis, d: Transition, f_ctx=None) -> float:
    """Sampled Bellman residual Q_{h,f}(x,a) - r - V_{h+1,f}(x').

    ``f_ctx`` is accepted for symmetry with the loss definition; this residual
    does not depend on it.
    """
    return _q_at(f, d) - d.r - float(f.values[d.h + 1, d.x_next])


def _transitions(history: Iterable[Episode], h: int):
    return [ep.transition(h) for ep in history]


def _infimum_subtracted(own: float, candidates: Iterable[float]) -> float:
    return own - min(candidates)


def modelfree_loss(f: ModelFreeHypothesis, history: Sequence[Episode], cls: HypothesisClass,
                   h: int) -> float:
    """Generalized squared Bellman error with the infimum over the h-th components of ``cls``."""
    data = _transitions(history, h)
    if not data:
        return 0.0

    def total(q_source: ModelFreeHypothesis) -> float:
        return sum((_q_at(q_source, d) - d.r - f.values[h + 1, d.x_next]) ** 2 for d in data)

    return _infimum_subtracted(total(f), (total(g) for g in cls))


def mg_ne_loss(f: ModelFreeHypothesis, history, cls, h) -> float:
    """Squared NE Bellman residual loss; the target uses the NE value of ``f`` at h+1."""
    return modelfree_loss(f, history, cls, h)


def mg_br_loss(g: ModelFreeHypothesis, mu, history, cls, h) -> float:
    """Squared best-response Bellman residual loss given the max-player policy ``mu``."""
    data = _transitions(history, h)
    if not data:
        return 0.0
    target_v = g.br_values(mu)

    def total(q_source: ModelFreeHypothesis) -> float:
        return sum((_q_at(q_source, d) - d.r - target_v[h + 1, d.x_next]) ** 2 for d in data)

    return _infimum_subtracted(total(g), (total(other) for other in cls))


def modelbased_nll(f: ModelBasedHypothesis, history: Sequence[Episode], h: int) -> float:
    """-sum_s log P_{h,f}(x_{h+1}^s | x_h^s, a_h^s [, b_h^s])."""
    total = 0.0
    for d in _transitions(history, h):
        idx = (h, d.x, d.a) if d.b is None else (h, d.x, d.a, d.b)
        total -= float(np.log(f.transitions[idx][d.x_next]))
    return total


def bellman_residual(f: ModelFreeHypothesis, env, h: int) -> np.ndarray:
    """Expected residual Q_{h,f} - r_h - P_h V_{h+1,f} under the true kernel."""
    return f.q[h] - env.rewards[h] - env.transitions[h] @ f.values[h + 1]


def discrepancy_modelfree(f: ModelFreeHypothesis, env, h: int, dist, f_ctx=None) -> float:
    """E_{(x,a)~dist} of the squared expected Bellman residual at step h."""
    return float(np.sum(np.asarray(dist) * bellman_residual(f, env, h) ** 2))


def discrepancy_modelbased(f: ModelBasedHypothesis, env, h: int, dist) -> float:
    """E_{(x,a)~dist} of the squared Hellinger distance between model and true rows."""
    rows = hellinger_rows(f.transitions[h], env.transitions[h])
    return float(np.sum(np.asarray(dist) * rows))


# -- ledgers -----------------------------------------------------------------

class LossLedger:
    """Running per-step losses ``L_h^k(f)`` for every member of a class.

    ``values`` has shape (H, M). ``k`` counts absorbed episodes.
    """

    def __init__(self, cls: HypothesisClass):
        self.cls = cls
        self.k = 0
        self._values = np.zeros((cls.horizon, len(cls)))

    @property
    def values(self) -> np.ndarray:
        return self._values.copy()

    def totals(self) -> np.ndarray:
        return self._values.sum(axis=0)

    def update(self, episode: Episode) -> None:
        raise NotImplementedError

    def rows(self):
        """(k, h, index, value) tuples of the current snapshot, h 1-based."""
        H, M = self._values.shape
        for h in range(H):
            for i in range(M):
                yield self.k, h + 1, i, float(self._values[h, i])


class NLLLedger(LossLedger):
    """Negative log-likelihood of every model; shared by both players in MGs."""

    def __init__(self, cls: HypothesisClass):
        if cls.kind != "model_based":
            raise TypeError("NLL ledger needs a model-based class")
        super().__init__(cls)
        self._steps = np.arange(cls.horizon)

    def increments(self, episode: Episode) -> np.ndarray:
        h, x, a, xn = self._steps, episode.states[:-1], episode.actions, episode.states[1:]
        inc = np.empty(self._values.shape)
        for i, m in enumerate(self.cls):
            if episode.min_actions is None:
                p = m.transitions[h, x, a, xn]
            else:
                p = m.transitions[h, x, a, episode.min_actions, xn]
            inc[:, i] = -np.log(p)
        return inc

    def update(self, episode: Episode) -> None:
        self._values += self.increments(episode)
        self.k += 1


class BellmanLedger(LossLedger):
    """Infimum-subtracted squared Bellman error (MDP optimality or MG NE targets).

    Keeps ``S[h, g, f] = sum_s (Q_{h,g}(x,a) - r - V_{h+1,f}(x'))^2`` so that
    ``L_h(f) = S[h, f, f] - min_g S[h, g, f]`` is exact after every update.
    """

    def __init__(self, cls: HypothesisClass):
        if cls.kind != "model_free":
            raise TypeError("Bellman ledger needs a model-free class")
        super().__init__(cls)
        self._q = np.stack([m.q for m in cls])
        self._v = np.stack([m.values for m in cls])
        M = len(cls)
        self._sums = np.zeros((cls.horizon, M, M))

    def _targets(self, h: int, x_next: int) -> np.ndarray:
        return self._v[:, h + 1, x_next]

    def update(self, episode: Episode) -> None:
        for d in episode:
            idx = (slice(None), d.h, d.x, d.a) if d.b is None else (slice(None), d.h, d.x, d.a, d.b)
            q = self._q[idx]
            t = d.r + self._targets(d.h, d.x_next)
            self._sums[d.h] += (q[:, None] - t[None, :]) ** 2
        self._values = np.diagonal(self._sums, axis1=1, axis2=2) - self._sums.min(axis=1)
        self.k += 1


class BestResponseLedger:
    """Min-player squared best-response residual losses, one ledger per max-player policy.

    The max-player policy is always ``mu_f`` for some member ``f``, so sums are
    cached by that index and built lazily by replaying the shared history.
    """

    def __init__(self, cls: HypothesisClass, policies: Optional[Sequence] = None):
        if cls.kind != "model_free" or not cls.is_game:
            raise TypeError("best-response ledger needs a model-free Markov-game class")
        self.cls = cls
        self.k = 0
        self._q = np.stack([m.q for m in cls])
        self._policies = policies if policies is not None else [m.max_policy for m in cls]
        self._history: list[Episode] = []
        self._sums: dict[int, np.ndarray] = {}
        self._targets: dict[int, np.ndarray] = {}

    def _absorb(self, key: int, episode: Episode) -> None:
        v = self._targets[key]
        sums = self._sums[key]
        for d in episode:
            q = self._q[:, d.h, d.x, d.a, d.b]
            t = d.r + v[:, d.h + 1, d.x_next]
            sums[d.h] += (q[:, None] - t[None, :]) ** 2

    def _ensure(self, key: int) -> None:
        if key in self._sums:
            return
        mu = self._policies[key]
        self._targets[key] = np.stack([g.br_values(mu) for g in self.cls])
        M = len(self.cls)
        self._sums[key] = np.zeros((self.cls.horizon, M, M))
        for ep in self._history:
            self._absorb(key, ep)

    def update(self, episode: Episode) -> None:
        self._history.append(episode)
        for key in self._sums:
            self._absorb(key, episode)
        self.k += 1

    def values(self, key: int) -> np.ndarray:
        self._ensure(key)
        sums = self._sums[key]
        return np.diagonal(sums, axis1=1, axis2=2) - sums.min(axis=1)

    def totals(self, key: int) -> np.ndarray:
        return self.values(key).sum(axis=0)


def make_ledger(cls: HypothesisClass) -> LossLedger:
    return NLLLedger(cls) if cls.kind == "model_based" else BellmanLedger(cls)

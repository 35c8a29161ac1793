"""Post-hoc checks of the generalization inequalities and a GEC-style ratio on logged runs.

All expectations are exact: visitation distributions of the exploration
policies are pushed forward through the true kernel.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Policy, initial_value, is_stationary, policy_evaluation
from .hypothesis import HypothesisClass
from .losses import bellman_residual, hellinger_rows
from .mex import RunLog, exploration_policy, predicted_policy

VIOLATION_TOL = 1e-9


def occupancy(env, policy) -> np.ndarray:
    """Exact distribution of (x_h, a_h[, b_h]) for every step; shape (H, S, *actions)."""
    H, S = env.horizon, env.n_states
    rho = np.zeros(S)
    if env.initial_distribution is not None:
        rho[:] = env.initial_distribution
    else:
        rho[env.initial_state] = 1.0
    out = np.zeros((H, S) + env.action_shape)
    for h in range(H):
        if env.is_game:
            mu, nu = policy
            out[h] = rho[:, None, None] * mu.probs[h][:, :, None] * nu.probs[h][:, None, :]
        else:
            out[h] = rho[:, None] * policy.probs[h]
        rho = np.tensordot(out[h], env.transitions[h], axes=(tuple(range(out[h].ndim)),
                                                              tuple(range(out[h].ndim))))
    return out


def _discrepancy_table(env, cls: HypothesisClass) -> np.ndarray:
    """Per-member per-(h, x, a[, b]) discrepancy: Hellinger rows or squared expected residuals."""
    if cls.kind == "model_based":
        return np.stack([hellinger_rows(m.transitions, env.transitions) for m in cls])
    return np.stack([np.stack([bellman_residual(m, env, h) ** 2 for h in range(env.horizon)])
                     for m in cls])


def _exploration_policies(runlog: RunLog, cls: HypothesisClass):
    """Key and policy that generated each logged episode."""
    cache = {}
    for k in range(len(runlog)):
        i = int(runlog.selected[k])
        if runlog.min_selected is not None:
            key = (i, int(runlog.min_selected[k]))
            if key not in cache:
                mu = cls[i].max_policy
                cache[key] = (mu, cls[key[1]].br_policy(mu))
        else:
            key = (i, int(runlog.explore_steps[k]))
            if key not in cache:
                base = predicted_policy(cls[i])
                step = key[1]
                if step < 0:
                    cache[key] = base
                else:
                    cache[key] = exploration_policy(base, "v", step + 1, lambda kk, H: kk - 1)[0]
        yield key, cache[key]


def expected_discrepancies(runlog: RunLog, env, cls: HypothesisClass) -> np.ndarray:
    """``E[k, f]`` = sum over earlier episodes s < k+1 of E_{xi ~ pi_exp^s}[ell(f; xi)], summed over h."""
    table = _discrepancy_table(env, cls)
    axes = tuple(range(1, table.ndim))
    per_key = {}
    increments = np.zeros((len(runlog), len(cls)))
    for k, (key, policy) in enumerate(_exploration_policies(runlog, cls)):
        if key not in per_key:
            d = occupancy(env, policy)
            per_key[key] = np.tensordot(table, d, axes=(axes, tuple(range(d.ndim))))
        increments[k] = per_key[key]
    # entry k uses episodes 1..k-1, matching the loss snapshot L^{k-1}
    return np.vstack([np.zeros((1, len(cls))), np.cumsum(increments, axis=0)[:-1]])


def input_digest(env, cls: HypothesisClass, runlog: RunLog) -> str:
    h = hashlib.sha256()
    P = env.transitions[0] if is_stationary(env.transitions) else env.transitions
    for arr in (P, env.rewards, runlog.selected, runlog.explore_steps):
        h.update(np.ascontiguousarray(arr).tobytes())
    for m in cls:
        arr = m.q if cls.kind == "model_free" else m.transitions
        arr = arr[0] if is_stationary(arr) else arr
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class GeneralizationReport:
    check: str
    violated: bool
    violation_rate: float
    max_violation: float
    min_margin: float
    worst_episode: int
    worst_index: int
    n_pairs: int
    constants: dict = field(default_factory=dict)
    digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _report(check, lhs, rhs, constants, digest) -> GeneralizationReport:
    margin = rhs - lhs
    bad = margin < -VIOLATION_TOL
    k, f = np.unravel_index(int(np.argmin(margin)), margin.shape)
    return GeneralizationReport(check, bool(bad.any()), float(bad.mean()),
                                float(max(0.0, -margin.min())), float(margin.min()),
                                int(k) + 1, int(f), int(margin.size), constants, digest)


def _loss_gap(runlog: RunLog, cls: HypothesisClass) -> np.ndarray:
    totals = runlog.losses.sum(axis=1)  # (K, M), snapshot L^{k-1}
    return totals[:, [cls.true_index]] - totals


def check_generalization_modelbased(runlog: RunLog, env, cls: HypothesisClass,
                                    delta: float = 0.05) -> GeneralizationReport:
    """sum_h L(f*) - L(f) <= -2 sum E[D_H] + 2 H log(H/delta) + 2 log|H| for all k, f."""
    if cls.true_index is None:
        raise ValueError("generalization check needs a realizable class with f* flagged")
    if cls.kind != "model_based":
        raise ValueError("expected a model-based class")
    H = env.horizon
    const = 2 * H * math.log(H / delta) + 2 * math.log(len(cls))
    rhs = -2.0 * expected_discrepancies(runlog, env, cls) + const
    return _report("generalization_modelbased", _loss_gap(runlog, cls), rhs,
                   {"delta": delta, "scale": 2.0, "offset": const}, input_digest(env, cls, runlog))


def check_generalization_modelfree(runlog: RunLog, env, cls: HypothesisClass,
                                   delta: float = 0.05) -> GeneralizationReport:
    """sum_h L(f*) - L(f) <= -1/2 sum E[ell] + 16 H B_l^2 log(HK/delta) + 32 B_l^2 log|H|, B_l = 2H."""
    if cls.true_index is None:
        raise ValueError("generalization check needs a realizable class with f* flagged")
    if cls.kind != "model_free":
        raise ValueError("expected a model-free class")
    H, K = env.horizon, max(len(runlog), 1)
    b_sq = (2.0 * H) ** 2
    const = 16 * H * b_sq * math.log(H * K / delta) + 32 * b_sq * math.log(len(cls))
    rhs = -0.5 * expected_discrepancies(runlog, env, cls) + const
    return _report("generalization_modelfree", _loss_gap(runlog, cls), rhs,
                   {"delta": delta, "scale": 0.5, "offset": const, "B_l": 2.0 * H},
                   input_digest(env, cls, runlog))


@dataclass
class GecTrace:
    """Labelled proxy: ratio of cumulative value over-estimation to in-sample discrepancy."""

    ratios: np.ndarray
    numerators: np.ndarray
    denominators: np.ndarray
    diverging: bool
    label: str = "proxy, not the eluder coefficient itself"


def empirical_gec_ratio(runlog: RunLog, env, cls: HypothesisClass) -> GecTrace:
    """Per k: sum_{j<=k} (V_{1,f^j} - V_1^{pi_{f^j}}) / sqrt(k * sum_{j<=k} sum_{s<j} E[ell(f^j)])."""
    if cls.is_game:
        raise ValueError("the ratio is defined for MDP runs")
    values = cls.initial_values()
    true_vals = {}
    over = np.zeros(len(runlog))
    for k, i in enumerate(runlog.selected):
        i = int(i)
        if i not in true_vals:
            true_vals[i] = initial_value(env, policy_evaluation(env, predicted_policy(cls[i])).V)
        over[k] = values[i] - true_vals[i]
    E = expected_discrepancies(runlog, env, cls)
    in_sample = E[np.arange(len(runlog)), runlog.selected]
    num = np.cumsum(over)
    k = np.arange(1, len(runlog) + 1)
    den = np.sqrt(np.cumsum(in_sample) * k)
    ratios = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    diverging = False
    K = len(ratios)
    if K >= 8:
        half = ratios[K // 2 - 1]
        if half > 0:
            diverging = bool(ratios[-1] > 1.5 * half * math.log(K) / math.log(K / 2))
    return GecTrace(ratios, num, den, diverging)

"""Monte-Carlo cost evaluation and two-point zeroth-order gradients.

Both estimators are written against abstract "scenarios": a scenario is
whatever randomness one rollout consumes (an initial state for deterministic
plants, a noise sequence for noisy ones).  Scenario sampling is driven by
per-index substreams derived from (seed, *key, index), so estimates are
reproducible under any batching or evaluation order.

Gradient aggregation uses compensated (Kahan) summation over the pair terms,
which keeps the result stable against summation-order changes to well below
1e-12 relative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .oracle import Policy
from .sim import RolloutConfig, derive_rng

__all__ = [
    "CostEstimate",
    "GradientEstimate",
    "EstimationFailure",
    "estimate_cost",
    "sample_sphere_perturbation",
    "two_point_gradient",
]


class EstimationFailure(RuntimeError):
    """Too many rollouts diverged for the estimate to mean anything."""

    def __init__(self, message: str, n_diverged: int):
        super().__init__(message)
        self.n_diverged = n_diverged


@dataclass(frozen=True)
class CostEstimate:
    """Sample mean of truncated rollout costs.

    value is +inf when any retained rollout diverged; n_diverged counts the
    divergence sentinels that contributed.
    """

    value: float
    n_rollouts: int
    horizon: int
    std_err: float
    n_diverged: int = 0


@dataclass(frozen=True)
class GradientEstimate:
    """Two-point estimate (1 / 2 r M) sum_i (V+ - V-) U_i over retained pairs."""

    grad: np.ndarray
    n_pairs: int
    smoothing_radius: float
    n_dropped: int = 0


def _compensated_matrix_sum(terms: Sequence[np.ndarray], shape) -> np.ndarray:
    total = np.zeros(shape)
    comp = np.zeros(shape)
    for t in terms:
        y = np.asarray(t, dtype=float) - comp
        s = total + y
        comp = (s - total) - y
        total = s
    return total


def estimate_cost(
    cost_rollout: Callable[[object], float],
    dist,
    cfg: RolloutConfig,
    key: tuple[int, ...] = (),
    batch_rollout: Callable[[np.ndarray], np.ndarray] | None = None,
) -> CostEstimate:
    """Average cfg.eval_batch independent rollout costs.

    dist must provide sample(rng); cost_rollout maps one scenario to a
    truncated cost.  batch_rollout, when given, evaluates a stacked array of
    scenarios in one call and must agree with cost_rollout.
    """
    n = cfg.eval_batch
    scenarios = [dist.sample(derive_rng(cfg.seed, *key, i)) for i in range(n)]
    if batch_rollout is not None:
        values = np.asarray(batch_rollout(np.stack(scenarios)), dtype=float)
    else:
        values = np.array([cost_rollout(s) for s in scenarios], dtype=float)
    diverged = ~np.isfinite(values)
    n_div = int(diverged.sum())
    if n_div == n:
        raise EstimationFailure(
            f"all {n} evaluation rollouts diverged", n_diverged=n_div
        )
    value = float(np.mean(values))
    if np.isfinite(value) and n > 1:
        std_err = float(np.std(values, ddof=1) / np.sqrt(n))
    elif np.isfinite(value):
        std_err = 0.0
    else:
        std_err = np.inf
    return CostEstimate(
        value=value, n_rollouts=n, horizon=cfg.horizon, std_err=std_err, n_diverged=n_div
    )


def sample_sphere_perturbation(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the Frobenius sphere of radius sqrt(m n) in R^{m x n}."""
    if m < 1 or n < 1:
        raise ValueError("perturbation dimensions must be >= 1")
    while True:
        g = rng.standard_normal((m, n))
        nrm2 = float((g * g).sum())
        if nrm2 > 0.0:
            return (np.sqrt(m * n / nrm2)) * g


def two_point_gradient(
    cost_rollout: Callable[[np.ndarray, object], float],
    pol: Policy,
    dist,
    cfg: RolloutConfig,
    key: tuple[int, ...] = (),
    batch_rollout: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    paired_scenarios: bool = True,
) -> GradientEstimate:
    """Two-point gradient of the rollout cost at pol.

    Per pair i: draw a sphere perturbation U_i and one scenario, evaluate the
    cost at K + rU_i and K - rU_i on that same scenario (common random
    numbers; set paired_scenarios=False to draw a fresh scenario for the
    minus branch), and average (V+ - V-) U_i / (2 r) over retained pairs.
    Pairs in which either rollout diverged are dropped and counted; more than
    half dropped is an estimation failure.
    """
    m_pairs = cfg.grad_batch
    r = cfg.smoothing_radius
    k0 = pol.k
    perturbations = []
    scen_plus = []
    scen_minus = []
    for i in range(m_pairs):
        rng = derive_rng(cfg.seed, *key, i)
        u = sample_sphere_perturbation(k0.shape[0], k0.shape[1], rng)
        s_plus = dist.sample(rng)
        perturbations.append(u)
        scen_plus.append(s_plus)
        scen_minus.append(s_plus if paired_scenarios else dist.sample(rng))
    u_stack = np.stack(perturbations)
    if batch_rollout is not None:
        gains = np.concatenate([k0[None] + r * u_stack, k0[None] - r * u_stack])
        scen = np.concatenate([np.stack(scen_plus), np.stack(scen_minus)])
        values = np.asarray(batch_rollout(gains, scen), dtype=float)
        v_plus, v_minus = values[:m_pairs], values[m_pairs:]
    else:
        v_plus = np.array(
            [cost_rollout(k0 + r * u, s) for u, s in zip(u_stack, scen_plus)]
        )
        v_minus = np.array(
            [cost_rollout(k0 - r * u, s) for u, s in zip(u_stack, scen_minus)]
        )
    keep = np.isfinite(v_plus) & np.isfinite(v_minus)
    n_keep = int(keep.sum())
    n_drop = m_pairs - n_keep
    if n_drop * 2 > m_pairs:
        raise EstimationFailure(
            f"{n_drop} of {m_pairs} perturbation pairs diverged", n_diverged=n_drop
        )
    terms = [(v_plus[i] - v_minus[i]) * u_stack[i] for i in range(m_pairs) if keep[i]]
    grad = _compensated_matrix_sum(terms, k0.shape) / (2.0 * r * n_keep)
    return GradientEstimate(
        grad=grad, n_pairs=n_keep, smoothing_radius=r, n_dropped=n_drop
    )

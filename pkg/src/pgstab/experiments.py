"""Experiment drivers: benchmark systems, the dimension-scaling study, and
region-of-attraction estimation for nonlinear plants.

These are the pieces that know plant matrices; the annealing loop itself
never does.  Drivers return plain result objects that the CLI serializes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import anneal, sim
from .estimate import EstimationFailure
from .oracle import LqrCostSpec, LtiSystem, Policy, optimal_lqr, spectral_radius

__all__ = [
    "StudyFailure",
    "two_dim_benchmark",
    "generate_random_system",
    "DimScalingResult",
    "run_dim_scaling",
    "RoaResult",
    "estimate_roa",
    "cartpole_lqr_baseline",
]


class StudyFailure(RuntimeError):
    """Too many runs of a study failed to complete."""


def two_dim_benchmark() -> tuple[LtiSystem, np.ndarray, np.ndarray]:
    """The unstable 2-state / 1-input benchmark plant with Q = I, R = 2."""
    a = np.array([[4.0, 3.0], [3.0, 1.5]])
    b = np.array([[2.0], [2.0]])
    return LtiSystem(a, b), np.eye(2), np.array([[2.0]])


def generate_random_system(n: int, m: int, rng: np.random.Generator) -> LtiSystem:
    """Random plant with spectral radius exactly 2 and unit-norm input matrix.

    A = 2 (G + G') / ||G + G'|| with standard-normal G (symmetric, so the
    2-norm equals the spectral radius); B = H / ||H|| with standard-normal H.
    """
    if n < 1 or m < 1:
        raise ValueError("system dimensions must be >= 1")
    while True:
        g = rng.standard_normal((n, n))
        s = g + g.T
        nrm = np.linalg.norm(s, 2)
        if nrm > 0.0:
            a = 2.0 * s / nrm
            break
    while True:
        h = rng.standard_normal((n, m))
        nrm = np.linalg.norm(h, 2)
        if nrm > 0.0:
            b = h / nrm
            break
    return LtiSystem(a, b)


@dataclass
class DimScalingResult:
    n_values: list[int]
    mean_rollouts: list[float]
    completed: list[int]
    excluded: list[int]
    slope: float | None
    intercept: float | None
    per_trial_rollouts: dict[int, list[int]] = field(default_factory=dict)


def run_dim_scaling(
    n_values: list[int],
    trials: int,
    seed: int,
    m: int = 8,
    eval_batch: int = 20,
    horizon: int = 60,
    smoothing_radius: float = 2e-3,
    step_size: float = 1e-3,
    step_size_ref_n: int = 16,
    xi: float = 0.9,
    max_outer: int = 3000,
    grad_batch_per_n: int = 20,
    cost_threshold: float = 1e6,
    max_exclusion_fraction: float = 0.25,
) -> DimScalingResult:
    """Sampled-annealing rollout counts as a function of state dimension.

    For each n: `trials` independent runs on fresh random plants with
    Q = I_n, R = I_m, gamma0 = 0.9 / rho(A)^2 = 0.225, and gradient batch
    M = grad_batch_per_n * n.  The gradient step shrinks past the reference
    dimension (step_size * min(1, step_size_ref_n / n)): cost magnitudes,
    and with them the heavy tail of two-point differences, grow with n, and
    a fixed step wrecks gains at large n.  Incomplete runs are excluded and
    counted; more than max_exclusion_fraction exclusions at any n is a
    study failure.  Fits least squares to (log n, log mean rollouts) when
    >= 2 sizes ran.
    """
    mean_rollouts: list[float] = []
    completed: list[int] = []
    excluded: list[int] = []
    per_trial: dict[int, list[int]] = {}
    for idx_n, n in enumerate(n_values):
        counts: list[int] = []
        n_excluded = 0
        eta_n = step_size * min(1.0, step_size_ref_n / n)
        for trial in range(trials):
            trial_seed_rng = sim.derive_rng(seed, 100, idx_n, trial)
            plant = generate_random_system(n, m, trial_seed_rng)
            gamma0 = 0.9 / spectral_radius(plant.a) ** 2
            cfg = anneal.AnnealingConfig(
                gamma0=gamma0,
                xi=xi,
                cost_threshold=cost_threshold,
                inner_mode=anneal.InnerMode.fixed_steps(1),
                rollout_cfg=sim.RolloutConfig(
                    horizon=horizon,
                    eval_batch=eval_batch,
                    grad_batch=grad_batch_per_n * n,
                    smoothing_radius=smoothing_radius,
                    step_size=eta_n,
                    seed=int(trial_seed_rng.integers(0, 2**63)),
                ),
                max_outer=max_outer,
                variant="sampled",
            )
            env = anneal.make_environment(
                "sampled",
                plant=plant,
                q=np.eye(n),
                r=np.eye(m),
                rollout_cfg=cfg.rollout_cfg,
                init_dist=sim.InitialStateDist.gaussian(n),
            )
            try:
                trace = anneal.run_annealing(env, cfg)
            except (
                anneal.AnnealingStallError,
                anneal.DegenerateEstimateError,
                EstimationFailure,
            ):
                n_excluded += 1
                continue
            if not trace.reached_target:
                n_excluded += 1
                continue
            counts.append(trace.total_rollouts)
        if n_excluded > max_exclusion_fraction * trials:
            raise StudyFailure(
                f"{n_excluded}/{trials} runs failed to complete at n = {n}"
            )
        mean_rollouts.append(float(np.mean(counts)))
        completed.append(len(counts))
        excluded.append(n_excluded)
        per_trial[n] = counts
    slope = intercept = None
    if len(n_values) >= 2:
        x = np.log(np.asarray(n_values, dtype=float))
        y = np.log(np.asarray(mean_rollouts))
        slope_f, intercept_f = np.polyfit(x, y, 1)
        slope, intercept = float(slope_f), float(intercept_f)
    return DimScalingResult(
        n_values=list(n_values),
        mean_rollouts=mean_rollouts,
        completed=completed,
        excluded=excluded,
        slope=slope,
        intercept=intercept,
        per_trial_rollouts=per_trial,
    )


@dataclass
class RoaResult:
    """Largest all-success sphere radius before the first failure."""

    r_roa: float
    radius_grid: list[float]
    trials_per_radius: int
    horizon: int
    successes: list[bool]
    r_ini: float | None = None


def estimate_roa(
    nl: sim.NonlinearSystem,
    pol: Policy,
    radius_grid,
    trials_per_radius: int,
    horizon: int,
    seed: int = 0,
    convergence_fraction: float = 0.2,
) -> RoaResult:
    """Monte-Carlo region-of-attraction radius of the undamped closed loop.

    For each radius (ascending): draw initial states uniformly on the sphere
    of that radius, simulate `horizon` closed-loop steps, and declare success
    iff every trajectory ends with norm <= radius * convergence_fraction.
    Scanning stops at the first failing radius.
    """
    grid = [float(r) for r in radius_grid]
    if not grid:
        raise ValueError("radius grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("radius grid must be strictly increasing")
    successes: list[bool] = []
    r_roa = 0.0
    for idx, r_test in enumerate(grid):
        rng = sim.derive_rng(seed, 200, idx)
        draws = rng.standard_normal((trials_per_radius, nl.state_dim))
        norms = np.linalg.norm(draws, axis=1)
        while (norms == 0.0).any():  # pragma: no cover
            redo = norms == 0.0
            draws[redo] = rng.standard_normal((int(redo.sum()), nl.state_dim))
            norms = np.linalg.norm(draws, axis=1)
        x = draws * (r_test / norms)[:, None]
        diverged = np.zeros(trials_per_radius, dtype=bool)
        for _ in range(horizon):
            u = -np.einsum("ij,bj->bi", pol.k, x)
            x = nl.step_batch(x, u)
            bad = ~np.isfinite(x).all(axis=1) | (
                np.einsum("bi,bi->b", x, x) > sim.DIVERGENCE_NORM**2
            )
            if bad.any():
                diverged |= bad
                x[bad] = 0.0
        final_norm = np.linalg.norm(x, axis=1)
        ok = bool((~diverged).all() and (final_norm <= r_test * convergence_fraction).all())
        successes.append(ok)
        if not ok:
            break
        r_roa = r_test
    return RoaResult(
        r_roa=r_roa,
        radius_grid=grid[: len(successes)],
        trials_per_radius=trials_per_radius,
        horizon=horizon,
        successes=successes,
    )


def cartpole_lqr_baseline(
    params: sim.CartpoleParams = sim.CartpoleParams(),
    q: np.ndarray | None = None,
    r: np.ndarray | None = None,
) -> Policy:
    """Optimal gain for the Euler-discretized linearization at the origin."""
    plant = sim.cartpole_linearization(params)
    q = 2.0 * np.eye(4) if q is None else q
    r = np.array([[1.0]]) if r is None else r
    pol, _ = optimal_lqr(plant, LqrCostSpec(q, r, 1.0))
    return pol

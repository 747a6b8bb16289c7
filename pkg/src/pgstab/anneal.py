"""Discount annealing: grow gamma toward 1 while policy gradient keeps the
current gain stable for the damped plant.

One outer iteration does three things: (1) update the gain by zeroth-order
policy gradient under the current discount factor, (2) evaluate the cost of
the new gain, (3) grow the discount factor by the certified rate
gamma' = (1 + xi * alpha) * gamma, where alpha is computed from the cost
alone.  The loop exits as soon as gamma' >= 1; the gain returned at that
point stabilizes the undamped plant (exactly in oracle mode, with high
probability in the sampled modes).

Four interchangeable environments supply cost/gradient/rate:

* exact     - model-based oracle (closed forms; zero rollouts),
* sampled   - deterministic plant, Monte-Carlo costs, two-point gradients,
* noisy     - additive-noise plant, x0 = 0, common random numbers per pair,
* nonlinear - damped black-box simulator with a box initial distribution.

The sampled rate divides by 2 J_hat instead of J_hat: with the prescribed
evaluation budget, J <= 2 J_hat holds with high probability, so the factor 2
turns the observable estimate into a usable upper bound on the true cost.
The noisy rate carries the extra gamma/(1-gamma) scaling of the noisy cost.
The nonlinear rate rescales the box-distribution cost by 3 / r_ini^2, which
maps it back to unit-covariance units (the box with half-width r has
covariance r^2/3 I) so the linear-case certificate applies unchanged.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import estimate as est
from . import sim
from .oracle import (
    DegenerateInstanceError,
    LqrCostSpec,
    LtiSystem,
    Policy,
    UnstableClosedLoopError,
    exact_cost,
    margin_alpha_exact,
    min_eig_sym,
    oracle_gradient,
)

__all__ = [
    "VARIANTS",
    "InnerMode",
    "AnnealingConfig",
    "IterationRecord",
    "AnnealingTrace",
    "AnnealingStallError",
    "DegenerateEstimateError",
    "update_rate_sampled",
    "update_rate_noisy",
    "update_rate_nonlinear",
    "OracleEnv",
    "SampledLinearEnv",
    "NoisyLinearEnv",
    "NonlinearEnv",
    "make_environment",
    "pg_inner_loop",
    "run_annealing",
    "iteration_bound_check",
]

VARIANTS = ("exact", "sampled", "noisy", "nonlinear")

# rng stream labels (first element of every derivation key)
_STREAM_GRAD = 1
_STREAM_EVAL = 2
_STREAM_RETRY = 3


class DegenerateEstimateError(RuntimeError):
    """Cost estimate too small (or non-finite) for a positive update rate."""


class AnnealingStallError(RuntimeError):
    """Inner loop exhausted its budget without reaching the cost threshold."""

    def __init__(self, message: str, best_policy: Policy, trace: "AnnealingTrace | None" = None):
        super().__init__(message)
        self.best_policy = best_policy
        self.trace = trace


@dataclass(frozen=True)
class InnerMode:
    """Policy-search schedule per outer iteration.

    kind "fixed": exactly `count` gradient steps, no threshold check (the
    experiment-reproduction mode).  kind "until": gradient steps until the
    estimated cost drops below the variant's threshold, at most `count`
    steps (the theory-faithful mode).
    """

    kind: str
    count: int

    def __post_init__(self):
        if self.kind not in ("fixed", "until"):
            raise ValueError(f"unknown inner mode {self.kind!r}")
        if self.count < 1:
            raise ValueError("inner mode needs count >= 1")

    @classmethod
    def fixed_steps(cls, count: int = 1) -> "InnerMode":
        return cls("fixed", count)

    @classmethod
    def until_threshold(cls, max_inner: int) -> "InnerMode":
        return cls("until", max_inner)


@dataclass(frozen=True)
class AnnealingConfig:
    gamma0: float
    xi: float
    cost_threshold: float
    inner_mode: InnerMode
    rollout_cfg: sim.RolloutConfig
    max_outer: int
    variant: str

    def __post_init__(self):
        if not (0.0 < self.gamma0 < 1.0):
            raise ValueError("gamma0 must lie in (0, 1)")
        if not (0.0 < self.xi <= 1.0):
            raise ValueError("xi must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "exact" and self.xi >= 1.0:
            raise ValueError("exact mode requires xi < 1 (xi = 1 can land on the stability boundary)")
        if not self.cost_threshold > 0.0:
            raise ValueError("cost_threshold must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    """One outer iteration: the gain produced under `gamma` and the update."""

    k: int
    gamma: float
    gamma_next: float
    policy: np.ndarray
    cost: float
    alpha: float
    inner_iters: int
    grad_rollouts: int
    eval_rollouts: int

    @property
    def rollouts(self) -> int:
        return self.grad_rollouts + self.eval_rollouts


@dataclass
class AnnealingTrace:
    variant: str
    records: list[IterationRecord] = field(default_factory=list)
    final_policy: Policy | None = None
    final_gamma: float = 0.0
    reached_target: bool = False
    total_rollouts: int = 0
    wall_time: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def cumulative_rollouts(self) -> list[int]:
        out, acc = [], 0
        for rec in self.records:
            acc += rec.rollouts
            out.append(acc)
        return out


# ---------------------------------------------------------------------------
# Update rates
# ---------------------------------------------------------------------------


def _stage_floor(pol: Policy, spec: LqrCostSpec) -> float:
    return min_eig_sym(spec.q + pol.k.T @ spec.r @ pol.k)


def update_rate_sampled(cost_hat: float, pol: Policy, spec: LqrCostSpec) -> float:
    """alpha = s / (2 J_hat - s), s = min eig(Q + K'RK)."""
    s = _stage_floor(pol, spec)
    if not np.isfinite(cost_hat):
        raise DegenerateEstimateError("cost estimate is not finite")
    den = 2.0 * cost_hat - s
    if den <= 0.0:
        raise DegenerateEstimateError(
            f"cost estimate {cost_hat} is implausibly small (floor {s})"
        )
    return s / den

def update_rate_noisy(cost_hat: float, pol: Policy, spec: LqrCostSpec) -> float:
    """alpha = gamma s / (2 (1 - gamma) J_hat - gamma s) for the noisy cost."""
    if spec.gamma >= 1.0:
        raise ValueError("noisy update rate is undefined at gamma >= 1")
    if not np.isfinite(cost_hat):
        raise DegenerateEstimateError("cost estimate is not finite")
    s = _stage_floor(pol, spec)
    den = 2.0 * (1.0 - spec.gamma) * cost_hat - spec.gamma * s
    if den <= 0.0:
        raise DegenerateEstimateError(
            f"noisy cost estimate {cost_hat} is implausibly small (floor {s})"
        )
    return spec.gamma * s / den


def update_rate_nonlinear(
    cost_hat: float, pol: Policy, spec: LqrCostSpec, r_ini: float
) -> float:
    """alpha = s / (3 J_hat / r_ini^2 - s) for the box-distribution cost.

    3 / r_ini^2 converts the box-covariance cost back to unit-covariance
    units, so for linear dynamics the denominator estimates Tr(P) and the
    linear-case stability certificate carries over.
    """
    if not r_ini > 0.0:
        raise ValueError("r_ini must be positive")
    if not np.isfinite(cost_hat):
        raise DegenerateEstimateError("cost estimate is not finite")
    s = _stage_floor(pol, spec)
    den = 3.0 * cost_hat / r_ini**2 - s
    if den <= 0.0:
        raise DegenerateEstimateError(
            f"nonlinear cost estimate {cost_hat} is implausibly small (floor {s})"
        )
    return s / den


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------


class OracleEnv:
    """Model-based environment: closed-form costs and gradients, no rollouts."""

    variant = "exact"

    def __init__(self, plant: LtiSystem, q: np.ndarray, r: np.ndarray):
        self.plant = plant
        self.spec0 = LqrCostSpec(q, r, 1.0)
        self.m, self.n = plant.m, plant.n

    def _spec(self, gamma: float) -> LqrCostSpec:
        return self.spec0.with_gamma(min(gamma, 1.0))

    def evaluate_cost(self, pol: Policy, gamma: float, key, n_mult=1, tau_mult=1):
        return exact_cost(self.plant, pol, self._spec(gamma)), 0

    def estimate_gradient(self, pol: Policy, gamma: float, key):
        return oracle_gradient(self.plant, pol, self._spec(gamma)), 0

    def update_rate(self, cost: float, pol: Policy, gamma: float) -> float:
        if not np.isfinite(cost):
            raise DegenerateEstimateError("exact cost is infinite (closed loop unstable)")
        try:
            return margin_alpha_exact(cost, pol, self._spec(gamma))
        except DegenerateInstanceError as exc:
            raise DegenerateEstimateError(str(exc)) from exc

    def inner_threshold(self, d: float) -> float:
        return d


class SampledLinearEnv:
    """Deterministic plant observed only through truncated rollout costs."""

    variant = "sampled"

    def __init__(
        self,
        plant: LtiSystem,
        q: np.ndarray,
        r: np.ndarray,
        dist: sim.InitialStateDist,
        cfg: sim.RolloutConfig,
    ):
        self.plant = plant
        self.spec0 = LqrCostSpec(q, r, 1.0)
        self.dist = dist
        self.cfg = cfg
        self.m, self.n = plant.m, plant.n

    def _spec(self, gamma: float) -> LqrCostSpec:
        return self.spec0.with_gamma(min(gamma, 1.0))

    def _scaled_cfg(self, n_mult: int, tau_mult: int) -> sim.RolloutConfig:
        if n_mult == 1 and tau_mult == 1:
            return self.cfg
        return sim.RolloutConfig(
            horizon=self.cfg.horizon * tau_mult,
            eval_batch=self.cfg.eval_batch * n_mult,
            grad_batch=self.cfg.grad_batch,
            smoothing_radius=self.cfg.smoothing_radius,
            step_size=self.cfg.step_size,
            seed=self.cfg.seed,
        )

    def evaluate_cost(self, pol: Policy, gamma: float, key, n_mult=1, tau_mult=1):
        cfg = self._scaled_cfg(n_mult, tau_mult)
        spec = self._spec(gamma)

        def batch(x0s):
            return sim.rollout_costs_linear_batch(
                self.plant, pol.k[None], spec, x0s, cfg.horizon
            )

        cost = est.estimate_cost(None, self.dist, cfg, key=key, batch_rollout=batch)
        return cost.value, cost.n_rollouts

    def estimate_gradient(self, pol: Policy, gamma: float, key):
        spec = self._spec(gamma)

        def batch(gains, x0s):
            return sim.rollout_costs_linear_batch(
                self.plant, gains, spec, x0s, self.cfg.horizon
            )

        g = est.two_point_gradient(
            None, pol, self.dist, self.cfg, key=key, batch_rollout=batch
        )
        return g.grad, 2 * self.cfg.grad_batch

    def update_rate(self, cost: float, pol: Policy, gamma: float) -> float:
        return update_rate_sampled(cost, pol, self._spec(gamma))

    def inner_threshold(self, d: float) -> float:
        return d / 2.0


class NoisyLinearEnv:
    """Additive-noise plant, x0 = 0; pairs share noise realizations."""

    variant = "noisy"

    def __init__(
        self,
        plant: LtiSystem,
        q: np.ndarray,
        r: np.ndarray,
        noise: sim.NoiseDist,
        cfg: sim.RolloutConfig,
        share_noise_in_pairs: bool = True,
    ):
        self.plant = plant
        self.spec0 = LqrCostSpec(q, r, 1.0)
        self.noise = noise
        self.cfg = cfg
        self.share_noise_in_pairs = share_noise_in_pairs
        self.m, self.n = plant.m, plant.n

    def _spec(self, gamma: float) -> LqrCostSpec:
        # gamma = 1 has no finite noisy cost; the rate rejects it upstream
        return self.spec0.with_gamma(min(gamma, 1.0))

    class _SeqDist:
        def __init__(self, noise: sim.NoiseDist, tau: int):
            self.noise = noise
            self.tau = tau

        def sample(self, rng):
            return self.noise.sample_sequence(self.tau, rng)

    def _scaled_cfg(self, n_mult: int, tau_mult: int) -> sim.RolloutConfig:
        if n_mult == 1 and tau_mult == 1:
            return self.cfg
        return sim.RolloutConfig(
            horizon=self.cfg.horizon * tau_mult,
            eval_batch=self.cfg.eval_batch * n_mult,
            grad_batch=self.cfg.grad_batch,
            smoothing_radius=self.cfg.smoothing_radius,
            step_size=self.cfg.step_size,
            seed=self.cfg.seed,
        )

    def evaluate_cost(self, pol: Policy, gamma: float, key, n_mult=1, tau_mult=1):
        cfg = self._scaled_cfg(n_mult, tau_mult)
        spec = self._spec(gamma)

        def batch(seqs):
            return sim.rollout_costs_noisy_batch(
                self.plant, pol.k[None], spec, seqs, cfg.horizon
            )

        cost = est.estimate_cost(
            None, self._SeqDist(self.noise, cfg.horizon), cfg, key=key, batch_rollout=batch
        )
        return cost.value, cost.n_rollouts

    def estimate_gradient(self, pol: Policy, gamma: float, key):
        spec = self._spec(gamma)

        def batch(gains, seqs):
            return sim.rollout_costs_noisy_batch(
                self.plant, gains, spec, seqs, self.cfg.horizon
            )

        g = est.two_point_gradient(
            None,
            pol,
            self._SeqDist(self.noise, self.cfg.horizon),
            self.cfg,
            key=key,
            batch_rollout=batch,
            paired_scenarios=self.share_noise_in_pairs,
        )
        return g.grad, 2 * self.cfg.grad_batch

    def update_rate(self, cost: float, pol: Policy, gamma: float) -> float:
        return update_rate_noisy(cost, pol, self._spec(min(gamma, 1.0 - 1e-12)))

    def inner_threshold(self, d: float) -> float:
        return d / 2.0


class NonlinearEnv:
    """Damped black-box simulator with uniform-box initial states."""

    variant = "nonlinear"

    def __init__(
        self,
        nl: sim.NonlinearSystem,
        q: np.ndarray,
        r: np.ndarray,
        r_ini: float,
        cfg: sim.RolloutConfig,
    ):
        self.nl = nl
        self.spec0 = LqrCostSpec(q, r, 1.0)
        self.r_ini = float(r_ini)
        self.dist = sim.InitialStateDist.uniform_box(nl.state_dim, r_ini)
        self.cfg = cfg
        self.m, self.n = nl.input_dim, nl.state_dim

    def _spec(self, gamma: float) -> LqrCostSpec:
        return self.spec0.with_gamma(min(gamma, 1.0))

    def _scaled_cfg(self, n_mult: int, tau_mult: int) -> sim.RolloutConfig:
        if n_mult == 1 and tau_mult == 1:
            return self.cfg
        return sim.RolloutConfig(
            horizon=self.cfg.horizon * tau_mult,
            eval_batch=self.cfg.eval_batch * n_mult,
            grad_batch=self.cfg.grad_batch,
            smoothing_radius=self.cfg.smoothing_radius,
            step_size=self.cfg.step_size,
            seed=self.cfg.seed,
        )

    def evaluate_cost(self, pol: Policy, gamma: float, key, n_mult=1, tau_mult=1):
        cfg = self._scaled_cfg(n_mult, tau_mult)
        spec = self._spec(gamma)

        def batch(x0s):
            return sim.rollout_costs_nonlinear_batch(
                self.nl, pol.k[None], spec, x0s, cfg.horizon
            )

        cost = est.estimate_cost(None, self.dist, cfg, key=key, batch_rollout=batch)
        return cost.value, cost.n_rollouts

    def estimate_gradient(self, pol: Policy, gamma: float, key):
        spec = self._spec(gamma)

        def batch(gains, x0s):
            return sim.rollout_costs_nonlinear_batch(
                self.nl, gains, spec, x0s, self.cfg.horizon
            )

        g = est.two_point_gradient(
            None, pol, self.dist, self.cfg, key=key, batch_rollout=batch
        )
        return g.grad, 2 * self.cfg.grad_batch

    def update_rate(self, cost: float, pol: Policy, gamma: float) -> float:
        return update_rate_nonlinear(cost, pol, self._spec(gamma), self.r_ini)

    def inner_threshold(self, d: float) -> float:
        return d / 2.0


def make_environment(
    variant: str,
    *,
    plant: LtiSystem | None = None,
    nonlinear: sim.NonlinearSystem | None = None,
    q: np.ndarray,
    r: np.ndarray,
    rollout_cfg: sim.RolloutConfig | None = None,
    init_dist: sim.InitialStateDist | None = None,
    noise_dist: sim.NoiseDist | None = None,
    r_ini: float | None = None,
):
    """Build the environment matching an annealing variant."""
    if variant == "exact":
        if plant is None:
            raise ValueError("exact mode needs a plant")
        return OracleEnv(plant, q, r)
    if variant == "sampled":
        if plant is None or rollout_cfg is None:
            raise ValueError("sampled mode needs a plant and a rollout config")
        dist = init_dist or sim.InitialStateDist.gaussian(plant.n)
        return SampledLinearEnv(plant, q, r, dist, rollout_cfg)
    if variant == "noisy":
        if plant is None or rollout_cfg is None:
            raise ValueError("noisy mode needs a plant and a rollout config")
        noise = noise_dist or sim.NoiseDist.uniform_sphere(plant.n)
        return NoisyLinearEnv(plant, q, r, noise, rollout_cfg)
    if variant == "nonlinear":
        if nonlinear is None or rollout_cfg is None or r_ini is None:
            raise ValueError("nonlinear mode needs a simulator, rollout config and r_ini")
        return NonlinearEnv(nonlinear, q, r, r_ini, rollout_cfg)
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# The outer loop
# ---------------------------------------------------------------------------


@dataclass
class _InnerStats:
    inner_iters: int = 0
    grad_rollouts: int = 0
    eval_rollouts: int = 0
    evals_done: int = 0


def pg_inner_loop(
    env,
    pol: Policy,
    gamma: float,
    cfg: AnnealingConfig,
    outer_k: int,
    warnings: list[str] | None = None,
) -> tuple[Policy, _InnerStats, float | None]:
    """Policy-search phase of one outer iteration.

    Fixed mode takes exactly cfg.inner_mode.count gradient steps and returns
    no cost (the caller evaluates afterwards).  Threshold mode alternates
    steps with cost estimates until the estimate drops below the variant's
    threshold, returning the final (finite) estimate for the rate update; an
    infinite estimate counts as above-threshold, so occasional divergent
    evaluation rollouts mean more optimization, not failure.  Exhausting the
    step budget raises AnnealingStallError carrying the best gain seen.
    """
    stats = _InnerStats()
    eta = cfg.rollout_cfg.step_size
    mode = cfg.inner_mode
    if mode.kind == "fixed":
        for j in range(mode.count):
            grad, used = env.estimate_gradient(pol, gamma, key=(_STREAM_GRAD, outer_k, j))
            stats.grad_rollouts += used
            pol = Policy(pol.k - eta * grad)
            stats.inner_iters += 1
        return pol, stats, None

    threshold = env.inner_threshold(cfg.cost_threshold)
    cost, used = env.evaluate_cost(pol, gamma, key=(_STREAM_EVAL, outer_k, stats.evals_done))
    stats.eval_rollouts += used
    stats.evals_done += 1
    best_pol, best_cost = pol, cost
    increases = 0
    warned = False
    while cost >= threshold:
        if stats.inner_iters >= mode.count:
            raise AnnealingStallError(
                f"inner loop hit {mode.count} steps with cost {cost} >= {threshold}",
                best_policy=best_pol,
            )
        try:
            grad, used = env.estimate_gradient(
                pol, gamma, key=(_STREAM_GRAD, outer_k, stats.inner_iters)
            )
        except UnstableClosedLoopError as exc:
            # oracle mode: a step left the feasible set, so no gradient exists
            raise AnnealingStallError(
                f"inner loop left the stability region at outer {outer_k}: {exc}",
                best_policy=best_pol,
            ) from exc
        stats.grad_rollouts += used
        pol = Policy(pol.k - eta * grad)
        stats.inner_iters += 1
        new_cost, used = env.evaluate_cost(
            pol, gamma, key=(_STREAM_EVAL, outer_k, stats.evals_done)
        )
        stats.eval_rollouts += used
        stats.evals_done += 1
        if new_cost > cost:
            increases += 1
            if increases >= 5 and not warned and warnings is not None:
                warnings.append(
                    f"outer {outer_k}: cost estimate increased {increases} consecutive inner steps"
                )
                warned = True
        else:
            increases = 0
        cost = new_cost
        if cost < best_cost:
            best_pol, best_cost = pol, cost
    return pol, stats, cost


def run_annealing(env, cfg: AnnealingConfig) -> AnnealingTrace:
    """Run the annealing loop from K = 0 until gamma >= 1 (or budgets bite).

    Returns a complete trace; reached_target is False when max_outer ran out
    with gamma < 1 (the trace is still returned, flagged).  Inner stalls and
    unrecoverable degenerate estimates raise, with the partial trace attached
    to the exception.
    """
    if env.variant != cfg.variant:
        raise ValueError(f"environment variant {env.variant!r} != config variant {cfg.variant!r}")
    trace = AnnealingTrace(variant=cfg.variant)
    pol = Policy.zero(env.m, env.n)
    gamma = cfg.gamma0
    start = time.perf_counter()
    try:
        for k in range(cfg.max_outer):
            pol, stats, cost = pg_inner_loop(env, pol, gamma, cfg, k, trace.warnings)
            if cost is None:
                cost, used = env.evaluate_cost(
                    pol, gamma, key=(_STREAM_EVAL, k, stats.evals_done)
                )
                stats.eval_rollouts += used
            try:
                alpha = env.update_rate(cost, pol, gamma)
            except DegenerateEstimateError:
                # one retry at 4x evaluation batch and 2x horizon
                cost, used = env.evaluate_cost(
                    pol, gamma, key=(_STREAM_RETRY, k), n_mult=4, tau_mult=2
                )
                stats.eval_rollouts += used
                alpha = env.update_rate(cost, pol, gamma)
            gamma_next = (1.0 + cfg.xi * alpha) * gamma
            trace.records.append(
                IterationRecord(
                    k=k,
                    gamma=gamma,
                    gamma_next=gamma_next,
                    policy=pol.k.copy(),
                    cost=cost,
                    alpha=alpha,
                    inner_iters=stats.inner_iters,
                    grad_rollouts=stats.grad_rollouts,
                    eval_rollouts=stats.eval_rollouts,
                )
            )
            trace.total_rollouts += stats.grad_rollouts + stats.eval_rollouts
            if gamma_next >= 1.0:
                trace.reached_target = True
                gamma = gamma_next
                break
            gamma = gamma_next
    except AnnealingStallError as exc:
        trace.wall_time = time.perf_counter() - start
        trace.final_policy = exc.best_policy
        trace.final_gamma = gamma
        exc.trace = trace
        raise
    except (DegenerateEstimateError, est.EstimationFailure) as exc:
        trace.wall_time = time.perf_counter() - start
        trace.final_policy = Policy(pol.k)
        trace.final_gamma = gamma
        exc.trace = trace  # type: ignore[attr-defined]
        raise
    trace.wall_time = time.perf_counter() - start
    trace.final_policy = pol
    trace.final_gamma = gamma
    return trace


def iteration_bound_check(trace: AnnealingTrace, cfg: AnnealingConfig, sigma_min_q: float) -> bool:
    """Outer-iteration count against the mode's worst-case bound.

    Exact mode: (D - s) log(1/gamma0) / (xi s); sampled modes replace D with
    2D (the factor-2 conservatism of the observable rate).  The bound is
    rounded up: a run always consumes whole iterations, so a fractional
    bound below 1 (gamma0 near 1) still admits the single exit iteration.
    Meaningful when the threshold was actually enforced (until-threshold
    inner mode).
    """
    s = float(sigma_min_q)
    d = cfg.cost_threshold
    if trace.variant == "exact":
        bound = (d - s) * np.log(1.0 / cfg.gamma0) / (cfg.xi * s)
    else:
        bound = (2.0 * d - s) * np.log(1.0 / cfg.gamma0) / (cfg.xi * s)
    return len(trace.records) <= np.ceil(bound)

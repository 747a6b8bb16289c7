"""Sample-path generation: initial states, noise, rollouts, and cart-pole.

Rollout costs come in three flavours that mirror the three problem settings:

* linear deterministic: simulate the true plant and accumulate gamma^t
  weighted stage costs (mathematically equal, per trajectory, to the
  unweighted cost of the sqrt(gamma)-damped plant);
* linear noisy: same weighting, x0 = 0, additive per-step noise;
* nonlinear: the damping multiplies the dynamics, x+ = sqrt(gamma) f(x, u),
  and stage costs are NOT discount-weighted.

All rollout routines return +inf as soon as the state norm exceeds
DIVERGENCE_NORM (1e150), which keeps unstable probes from propagating NaNs
into estimators; the check runs before the stage cost is accumulated so the
cost itself can never overflow.

Randomness is drawn from counter-style substreams keyed by integer tuples
(seed, stream label, indices ...), so batch members get reproducible streams
regardless of evaluation order or batching.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .oracle import LqrCostSpec, LtiSystem, Policy

__all__ = [
    "DIVERGENCE_NORM",
    "derive_rng",
    "InitialStateDist",
    "NoiseDist",
    "RolloutConfig",
    "NonlinearSystem",
    "sample_initial_state",
    "rollout_cost_linear",
    "rollout_cost_noisy",
    "rollout_cost_nonlinear",
    "rollout_costs_linear_batch",
    "rollout_costs_noisy_batch",
    "rollout_costs_nonlinear_batch",
    "cartpole_step",
    "CartpoleParams",
    "cartpole_system",
    "cartpole_linearization",
]

DIVERGENCE_NORM = 1e150

_SEED_MASK = (1 << 64) - 1


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *key).

    Philox is counter-based, so streams derived from distinct keys are
    statistically independent and reproducible under any scheduling.
    """
    ss = np.random.SeedSequence([int(seed) & _SEED_MASK, *[int(k) & _SEED_MASK for k in key]])
    return np.random.Generator(np.random.Philox(ss))


def _sphere_point(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    while True:
        g = rng.standard_normal(dim)
        nrm = np.linalg.norm(g)
        if nrm > 0.0:
            return (radius / nrm) * g


@dataclass(frozen=True)
class InitialStateDist:
    """Initial-state law: uniform sphere, standard gaussian, or uniform box.

    The sphere's default radius sqrt(dim) gives unit covariance and a support
    bound of exactly sqrt(dim).  The box with half-width h has covariance
    (h^2/3) I.  The gaussian has unbounded support; runs using it are flagged
    as assumption-relaxed in experiment metadata.
    """

    kind: str
    dim: int
    radius: float = 0.0  # sphere radius or box half-width; unused for gaussian

    def __post_init__(self):
        if self.kind not in ("uniform_sphere", "gaussian", "uniform_box"):
            raise ValueError(f"unknown initial-state distribution {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.kind != "gaussian" and not self.radius > 0.0:
            raise ValueError(f"{self.kind} needs a positive radius")

    @classmethod
    def uniform_sphere(cls, dim: int, radius: float | None = None) -> "InitialStateDist":
        return cls("uniform_sphere", dim, float(radius) if radius is not None else float(np.sqrt(dim)))

    @classmethod
    def gaussian(cls, dim: int) -> "InitialStateDist":
        return cls("gaussian", dim)

    @classmethod
    def uniform_box(cls, dim: int, half_width: float) -> "InitialStateDist":
        return cls("uniform_box", dim, float(half_width))

    @property
    def support_bound(self) -> float:
        """Largest possible norm of a draw (inf for the gaussian)."""
        if self.kind == "uniform_sphere":
            return self.radius
        if self.kind == "uniform_box":
            return self.radius * float(np.sqrt(self.dim))
        return np.inf

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform_sphere":
            return _sphere_point(rng, self.dim, self.radius)
        if self.kind == "uniform_box":
            return rng.uniform(-self.radius, self.radius, size=self.dim)
        return rng.standard_normal(self.dim)


def sample_initial_state(dist: InitialStateDist, rng: np.random.Generator) -> np.ndarray:
    """One draw from the initial-state law."""
    return dist.sample(rng)


@dataclass(frozen=True)
class NoiseDist:
    """Per-step additive noise: uniform sphere or norm-truncated gaussian.

    The sphere at radius sqrt(dim) has zero mean and unit covariance with
    support bound exactly sqrt(dim).  The truncated gaussian resamples until
    the norm is within the bound; its covariance is slightly below identity
    unless the bound is well above sqrt(dim).
    """

    kind: str
    dim: int
    bound: float

    def __post_init__(self):
        if self.kind not in ("uniform_sphere", "truncated_gaussian"):
            raise ValueError(f"unknown noise distribution {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.bound > 0.0:
            raise ValueError("bound must be positive")

    @classmethod
    def uniform_sphere(cls, dim: int, radius: float | None = None) -> "NoiseDist":
        return cls("uniform_sphere", dim, float(radius) if radius is not None else float(np.sqrt(dim)))

    @classmethod
    def truncated_gaussian(cls, dim: int, bound: float) -> "NoiseDist":
        return cls("truncated_gaussian", dim, float(bound))

    def sample_sequence(self, tau: int, rng: np.random.Generator) -> np.ndarray:
        """(tau, dim) array of independent noise draws."""
        if self.kind == "uniform_sphere":
            g = rng.standard_normal((tau, self.dim))
            nrm = np.linalg.norm(g, axis=1)
            while (nrm == 0.0).any():  # pragma: no cover - measure-zero event
                redo = nrm == 0.0
                g[redo] = rng.standard_normal((int(redo.sum()), self.dim))
                nrm = np.linalg.norm(g, axis=1)
            return g * (self.bound / nrm)[:, None]
        out = rng.standard_normal((tau, self.dim))
        nrm = np.linalg.norm(out, axis=1)
        bad = nrm > self.bound
        while bad.any():
            out[bad] = rng.standard_normal((int(bad.sum()), self.dim))
            nrm = np.linalg.norm(out, axis=1)
            bad = nrm > self.bound
        return out


@dataclass(frozen=True)
class RolloutConfig:
    """Sampling budget and step size for one annealing run.

    horizon: rollout truncation tau.
    eval_batch: rollouts per cost evaluation (N).
    grad_batch: perturbation pairs per gradient estimate (M).
    smoothing_radius: two-point perturbation radius r.
    step_size: gradient step eta (zero allowed so stalls are testable).
    seed: root of every random stream in the run.
    """

    horizon: int
    eval_batch: int
    grad_batch: int
    smoothing_radius: float
    step_size: float
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.eval_batch < 1 or self.grad_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if not self.smoothing_radius > 0.0:
            raise ValueError("smoothing_radius must be positive")
        if self.step_size < 0.0:
            raise ValueError("step_size must be >= 0")


@dataclass(frozen=True)
class NonlinearSystem:
    """Black-box dynamics x+ = step(x, u) with an equilibrium at the origin.

    Set vectorized=True when step accepts stacked states (batch, n) with
    inputs (batch, m) and maps them row-wise; batch rollouts then avoid a
    Python loop over batch members.
    """

    step: Callable[[np.ndarray, np.ndarray], np.ndarray]
    state_dim: int
    input_dim: int
    vectorized: bool = False

    def __post_init__(self):
        x0 = np.zeros(self.state_dim)
        u0 = np.zeros(self.input_dim)
        if self.vectorized:
            out = np.asarray(self.step(x0[None, :], u0[None, :]))[0]
        else:
            out = np.asarray(self.step(x0, u0))
        if out.shape != (self.state_dim,) or np.linalg.norm(out) > 1e-12:
            raise ValueError("dynamics must map the origin (with zero input) to itself")

    def step_batch(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.step(x, u))
        return np.stack([np.asarray(self.step(xi, ui)) for xi, ui in zip(x, u)])


# ---------------------------------------------------------------------------
# Linear rollouts
# ---------------------------------------------------------------------------


def rollout_cost_linear(
    sys: LtiSystem, pol: Policy, spec: LqrCostSpec, x0: np.ndarray, tau: int
) -> float:
    """Truncated discounted cost of one closed-loop trajectory from x0."""
    costs = rollout_costs_linear_batch(
        sys, pol.k[None, :, :], spec, np.asarray(x0, dtype=float)[None, :], tau
    )
    return float(costs[0])


def rollout_costs_linear_batch(
    sys: LtiSystem, gains: np.ndarray, spec: LqrCostSpec, x0s: np.ndarray, tau: int
) -> np.ndarray:
    """Vectorized rollout_cost_linear over stacked gains (B,m,n) and states (B,n)."""
    x0s = np.asarray(x0s, dtype=float)
    gains = np.asarray(gains, dtype=float)
    if gains.shape[0] == 1 and x0s.shape[0] > 1:
        gains = np.broadcast_to(gains, (x0s.shape[0],) + gains.shape[1:])
    if gains.shape[1:] != (sys.m, sys.n) or x0s.shape[1] != sys.n:
        raise ValueError("gain or state dimensions do not match the plant")
    batch = x0s.shape[0]
    x = x0s.copy()
    costs = np.zeros(batch)
    alive = np.ones(batch, dtype=bool)
    at, bt = sys.a.T, sys.b.T
    q, r, gamma = spec.q, spec.r, spec.gamma
    disc = 1.0
    for _ in range(tau):
        norm2 = np.einsum("bi,bi->b", x, x)
        blown = alive & ((norm2 > DIVERGENCE_NORM**2) | ~np.isfinite(norm2))
        if blown.any():
            costs[blown] = np.inf
            alive &= ~blown
            x[blown] = 0.0
        u = -np.einsum("bij,bj->bi", gains, x)
        stage = ((x @ q) * x).sum(axis=1) + ((u @ r) * u).sum(axis=1)
        costs[alive] += disc * stage[alive]
        x = x @ at + u @ bt
        disc *= gamma
    return costs


def rollout_cost_noisy(
    sys: LtiSystem, pol: Policy, spec: LqrCostSpec, noise_seq: np.ndarray, tau: int
) -> float:
    """Truncated discounted cost from x0 = 0 under an explicit noise sequence."""
    noise_seq = np.asarray(noise_seq, dtype=float)
    costs = rollout_costs_noisy_batch(sys, pol.k[None, :, :], spec, noise_seq[None, :, :], tau)
    return float(costs[0])


def rollout_costs_noisy_batch(
    sys: LtiSystem, gains: np.ndarray, spec: LqrCostSpec, noise_seqs: np.ndarray, tau: int
) -> np.ndarray:
    """Vectorized noisy rollouts; noise_seqs has shape (B, >=tau, n)."""
    gains = np.asarray(gains, dtype=float)
    noise_seqs = np.asarray(noise_seqs, dtype=float)
    if noise_seqs.shape[1] < tau:
        raise ValueError(f"noise sequence shorter than horizon ({noise_seqs.shape[1]} < {tau})")
    batch = max(gains.shape[0], noise_seqs.shape[0])
    if gains.shape[0] == 1 and batch > 1:
        gains = np.broadcast_to(gains, (batch,) + gains.shape[1:])
    if noise_seqs.shape[0] == 1 and batch > 1:
        noise_seqs = np.broadcast_to(noise_seqs, (batch,) + noise_seqs.shape[1:])
    if gains.shape[1:] != (sys.m, sys.n) or noise_seqs.shape[2] != sys.n:
        raise ValueError("gain or noise dimensions do not match the plant")
    x = np.zeros((batch, sys.n))
    costs = np.zeros(batch)
    alive = np.ones(batch, dtype=bool)
    at, bt = sys.a.T, sys.b.T
    q, r, gamma = spec.q, spec.r, spec.gamma
    disc = 1.0
    for t in range(tau):
        norm2 = np.einsum("bi,bi->b", x, x)
        blown = alive & ((norm2 > DIVERGENCE_NORM**2) | ~np.isfinite(norm2))
        if blown.any():
            costs[blown] = np.inf
            alive &= ~blown
            x[blown] = 0.0
        u = -np.einsum("bij,bj->bi", gains, x)
        stage = ((x @ q) * x).sum(axis=1) + ((u @ r) * u).sum(axis=1)
        costs[alive] += disc * stage[alive]
        x = x @ at + u @ bt + noise_seqs[:, t]
        disc *= gamma
    return costs


# ---------------------------------------------------------------------------
# Nonlinear rollouts
# ---------------------------------------------------------------------------


def rollout_cost_nonlinear(
    nl: NonlinearSystem, pol: Policy, spec: LqrCostSpec, x0: np.ndarray, tau: int
) -> float:
    """Unweighted truncated cost along the sqrt(gamma)-damped dynamics.

    The damping multiplies the dynamics map, not the stage cost.
    """
    costs = rollout_costs_nonlinear_batch(
        nl, pol.k[None, :, :], spec, np.asarray(x0, dtype=float)[None, :], tau
    )
    return float(costs[0])


def rollout_costs_nonlinear_batch(
    nl: NonlinearSystem, gains: np.ndarray, spec: LqrCostSpec, x0s: np.ndarray, tau: int
) -> np.ndarray:
    gains = np.asarray(gains, dtype=float)
    x0s = np.asarray(x0s, dtype=float)
    if gains.shape[0] == 1 and x0s.shape[0] > 1:
        gains = np.broadcast_to(gains, (x0s.shape[0],) + gains.shape[1:])
    if gains.shape[1:] != (nl.input_dim, nl.state_dim) or x0s.shape[1] != nl.state_dim:
        raise ValueError("gain or state dimensions do not match the dynamics")
    batch = x0s.shape[0]
    x = x0s.copy()
    costs = np.zeros(batch)
    alive = np.ones(batch, dtype=bool)
    q, r = spec.q, spec.r
    damp = float(np.sqrt(spec.gamma))
    for _ in range(tau):
        norm2 = np.einsum("bi,bi->b", x, x)
        blown = alive & ((norm2 > DIVERGENCE_NORM**2) | ~np.isfinite(norm2))
        if blown.any():
            costs[blown] = np.inf
            alive &= ~blown
            x[blown] = 0.0
        u = -np.einsum("bij,bj->bi", gains, x)
        stage = ((x @ q) * x).sum(axis=1) + ((u @ r) * u).sum(axis=1)
        costs[alive] += stage[alive]
        x = damp * nl.step_batch(x, u)
    return costs


# ---------------------------------------------------------------------------
# Cart-pole
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CartpoleParams:
    """Pole mass, cart mass, pole length, gravity, Euler step."""

    m_p: float = 1.0
    m_c: float = 1.0
    length: float = 1.0
    gravity: float = 1.0
    dt: float = 0.02


def cartpole_step(state, u, params: CartpoleParams = CartpoleParams()) -> np.ndarray:
    """One forward-Euler step of the cart-pole, state = (z, theta, zd, thetad).

    Solves the 2x2 mass-matrix system for the accelerations in closed form,
    then updates positions with the old velocities and velocities with the
    new accelerations.  Accepts a single state (4,) with scalar u, or a stack
    (batch, 4) with u of shape (batch,).
    """
    x = np.asarray(state, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    uu = np.atleast_1d(np.asarray(u, dtype=float)).reshape(x.shape[0])
    mp, mc, ell, grav, dt = (
        params.m_p,
        params.m_c,
        params.length,
        params.gravity,
        params.dt,
    )
    z, th, zd, thd = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    sin, cos = np.sin(th), np.cos(th)
    # mass matrix [[a, b], [b, c]] with b = -mp*l*cos(theta)
    a = mp + mc
    b = -mp * ell * cos
    c = mp * ell**2
    det = a * c - b * b  # = mp*l^2*(mp + mc - mp*cos^2) >= mp*l^2*mc > 0
    assert np.all(det > 0.0), "cart-pole mass matrix became singular"
    rhs1 = uu - mp * ell * sin * thd**2
    rhs2 = mp * grav * ell * sin
    zdd = (c * rhs1 - b * rhs2) / det
    thdd = (-b * rhs1 + a * rhs2) / det
    out = np.stack([z + dt * zd, th + dt * thd, zd + dt * zdd, thd + dt * thdd], axis=1)
    return out[0] if single else out


def cartpole_system(params: CartpoleParams = CartpoleParams()) -> NonlinearSystem:
    """Cart-pole as a NonlinearSystem (vectorized, single input)."""

    def step(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.ndim == 1:
            return cartpole_step(x, float(u.reshape(-1)[0]), params)
        return cartpole_step(x, u[:, 0], params)

    return NonlinearSystem(step=step, state_dim=4, input_dim=1, vectorized=True)


def cartpole_linearization(params: CartpoleParams = CartpoleParams()) -> LtiSystem:
    """Forward-Euler discretization of the dynamics linearized at the origin."""
    mp, mc, ell, grav, dt = (
        params.m_p,
        params.m_c,
        params.length,
        params.gravity,
        params.dt,
    )
    a = mp + mc
    b = -mp * ell
    c = mp * ell**2
    det = a * c - b * b
    # accelerations at the origin: [zdd, thdd] = Minv @ [u, mp*g*l*theta]
    g_z = c / det  # dzdd/du
    g_th = -b / det  # dthdd/du
    q_z = -b * mp * grav * ell / det  # dzdd/dtheta
    q_th = a * mp * grav * ell / det  # dthdd/dtheta
    a_c = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, q_z, 0.0, 0.0],
            [0.0, q_th, 0.0, 0.0],
        ]
    )
    b_c = np.array([[0.0], [0.0], [g_z], [g_th]])
    return LtiSystem(np.eye(4) + dt * a_c, dt * b_c)

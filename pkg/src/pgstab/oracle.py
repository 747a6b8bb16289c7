"""Exact model-based computations for discounted LQR.

Everything here assumes full knowledge of the plant (A, B) and serves as the
ground truth that the sample-based estimators are tested against: spectral
radii, damped-stability tests, discounted Lyapunov and Riccati solves,
closed-form costs and policy gradients, and the cost-based discount margin.

Conventions. The closed loop is x+ = (A - B K) x with u = -K x.  A pair
(K, gamma) is "gamma-stable" when sqrt(gamma) * rho(A - B K) < 1, which is
exactly the condition for the discounted cost

    J_gamma(K) = E sum_t gamma^t (x' Q x + u' R u),   E[x0 x0'] = I,

to be finite.  The value matrix P solves

    P = Q + K'RK + gamma * (A-BK)' P (A-BK)                      (value form)

and the state covariance accumulates forward,

    Sigma = I + gamma * (A-BK) Sigma (A-BK)',                    (covariance)

so that J = Tr(P) = Tr((Q + K'RK) Sigma).  Note the covariance recursion
propagates with the closed-loop matrix on the *left*; the transposed variant
does not satisfy the trace identity for non-normal closed loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LtiSystem",
    "Policy",
    "LqrCostSpec",
    "LyapunovSolution",
    "UnstableClosedLoopError",
    "DegenerateInstanceError",
    "NumericalError",
    "NonStabilizableError",
    "spectral_radius",
    "is_gamma_stable",
    "solve_discounted_lyapunov",
    "exact_cost",
    "exact_cost_noisy",
    "oracle_gradient",
    "optimal_lqr",
    "margin_alpha_exact",
    "min_eig_sym",
]

# Direct (vectorized) Lyapunov solve up to this state dimension; fixed-point
# iteration beyond, to avoid the O(n^4) memory of the Kronecker system.
_DIRECT_SOLVE_MAX_DIM = 64

#: Slack subtracted from the strict stability inequality so that floating
#: point ties resolve conservatively.
DEFAULT_MARGIN_EPS = 1e-12

DEFAULT_SOLVE_TOL = 1e-10


class UnstableClosedLoopError(RuntimeError):
    """The requested quantity needs a gamma-stable closed loop and got none."""


class DegenerateInstanceError(RuntimeError):
    """Cost at or below the smallest penalty eigenvalue; margin undefined."""


class NumericalError(RuntimeError):
    """A linear-algebra routine failed to meet its residual tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NonStabilizableError(RuntimeError):
    """Riccati value iteration diverged or exhausted its budget."""


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time plant x+ = A x + B u."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = _as_matrix(self.a, "a")
        b = _as_matrix(self.b, "b")
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"a must be square, got shape {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise ValueError(f"b must have {a.shape[0]} rows, got {b.shape[0]}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class Policy:
    """Static feedback gain, u = -k x."""

    k: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k", _as_matrix(self.k, "k"))

    @classmethod
    def zero(cls, m: int, n: int) -> "Policy":
        return cls(np.zeros((m, n)))

    @property
    def m(self) -> int:
        return self.k.shape[0]

    @property
    def n(self) -> int:
        return self.k.shape[1]


@dataclass(frozen=True)
class LqrCostSpec:
    """Stage penalties (q, r) and discount factor gamma.

    q and r must be symmetric positive definite.  gamma = 0 is admitted (the
    cost degenerates to the first stage) even though the annealing loop only
    ever uses gamma in (0, 1].
    """

    q: np.ndarray
    r: np.ndarray
    gamma: float

    def __post_init__(self):
        q = _as_matrix(self.q, "q")
        r = _as_matrix(self.r, "r")
        for name, s in (("q", q), ("r", r)):
            if s.shape[0] != s.shape[1]:
                raise ValueError(f"{name} must be square, got shape {s.shape}")
            if not np.allclose(s, s.T, rtol=0.0, atol=1e-10 * (1.0 + np.abs(s).max())):
                raise ValueError(f"{name} must be symmetric")
            if min_eig_sym(s) <= 0.0:
                raise ValueError(f"{name} must be positive definite")
        g = float(self.gamma)
        if not np.isfinite(g) or g < 0.0 or g > 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {g}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "gamma", g)

    def with_gamma(self, gamma: float) -> "LqrCostSpec":
        return LqrCostSpec(self.q, self.r, gamma)


@dataclass(frozen=True)
class LyapunovSolution:
    """Value matrix p, state covariance sigma, and cost = Tr(p)."""

    p: np.ndarray
    sigma: np.ndarray
    cost: float


def min_eig_sym(s: np.ndarray) -> float:
    """Smallest eigenvalue of a nominally symmetric matrix.

    Symmetrizes as (s + s') / 2 first to absorb round-off asymmetry.
    """
    s = np.asarray(s, dtype=float)
    return float(np.linalg.eigvalsh((s + s.T) / 2.0).min())


def spectral_radius(mat) -> float:
    """max |eig(mat)| for a square matrix with finite entries."""
    a = _as_matrix(mat, "mat")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {a.shape}")
    try:
        ev = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.abs(ev).max())


def closed_loop(sys: LtiSystem, pol: Policy) -> np.ndarray:
    """A - B K, with dimension checks."""
    if pol.k.shape != (sys.m, sys.n):
        raise ValueError(
            f"gain shape {pol.k.shape} does not match plant ({sys.m}, {sys.n})"
        )
    return sys.a - sys.b @ pol.k


def is_gamma_stable(
    sys: LtiSystem, pol: Policy, gamma: float, margin_eps: float = DEFAULT_MARGIN_EPS
) -> bool:
    """True iff sqrt(gamma) * rho(A - B K) < 1 - margin_eps."""
    if gamma < 0.0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return np.sqrt(gamma) * spectral_radius(closed_loop(sys, pol)) < 1.0 - margin_eps


def _lyapunov_direct(m: np.ndarray, rhs: np.ndarray, gamma: float, transpose_left: bool) -> np.ndarray:
    """Solve X = rhs + gamma * M' X M (or M X M' when transpose_left is False).

    Uses the row-major vec identity vec(A X B) = kron(A, B') vec(X) on the
    n^2-dimensional linear system; exact up to the dense solve.
    """
    n = m.shape[0]
    if transpose_left:
        op = np.kron(m.T, m.T)  # vec(M' X M)
    else:
        op = np.kron(m, m)  # vec(M X M')
    lhs = np.eye(n * n) - gamma * op
    x = np.linalg.solve(lhs, rhs.reshape(-1)).reshape(n, n)
    return (x + x.T) / 2.0


def _lyapunov_iterative(
    m: np.ndarray, rhs: np.ndarray, gamma: float, transpose_left: bool, tol: float
) -> np.ndarray:
    x = rhs.copy()
    for _ in range(1_000_000):
        if transpose_left:
            x_next = rhs + gamma * m.T @ x @ m
        else:
            x_next = rhs + gamma * m @ x @ m.T
        delta = np.linalg.norm(x_next - x, "fro")
        x = x_next
        if delta <= 0.1 * tol * (1.0 + np.linalg.norm(x, "fro")):
            return (x + x.T) / 2.0
        if not np.all(np.isfinite(x)):
            raise NumericalError("Lyapunov fixed-point iteration diverged")
    raise NumericalError("Lyapunov fixed-point iteration exhausted its budget")


def _solve_stable_lyapunov(
    m: np.ndarray, rhs: np.ndarray, gamma: float, transpose_left: bool, tol: float
) -> np.ndarray:
    if m.shape[0] <= _DIRECT_SOLVE_MAX_DIM:
        x = _lyapunov_direct(m, rhs, gamma, transpose_left)
    else:
        x = _lyapunov_iterative(m, rhs, gamma, transpose_left, tol)
    if transpose_left:
        res = x - rhs - gamma * m.T @ x @ m
    else:
        res = x - rhs - gamma * m @ x @ m.T
    resn = float(np.linalg.norm(res, "fro"))
    if resn > tol * (1.0 + np.linalg.norm(x, "fro")):
        raise NumericalError("Lyapunov residual above tolerance", residual=resn)
    return x


def solve_discounted_lyapunov(
    sys: LtiSystem, pol: Policy, spec: LqrCostSpec, tol: float = DEFAULT_SOLVE_TOL
) -> LyapunovSolution:
    """Value matrix, covariance, and cost of a gamma-stable closed loop.

    Raises UnstableClosedLoopError when sqrt(gamma) rho(A - BK) >= 1; callers
    that want an infinity sentinel should use exact_cost instead.
    """
    if not is_gamma_stable(sys, pol, spec.gamma):
        raise UnstableClosedLoopError(
            "closed loop is not gamma-stable; the discounted cost diverges"
        )
    m = closed_loop(sys, pol)
    stage = spec.q + pol.k.T @ spec.r @ pol.k
    stage = (stage + stage.T) / 2.0
    p = _solve_stable_lyapunov(m, stage, spec.gamma, transpose_left=True, tol=tol)
    sigma = _solve_stable_lyapunov(
        m, np.eye(sys.n), spec.gamma, transpose_left=False, tol=tol
    )
    return LyapunovSolution(p=p, sigma=sigma, cost=float(np.trace(p)))


def exact_cost(sys: LtiSystem, pol: Policy, spec: LqrCostSpec) -> float:
    """J_gamma(K) = Tr(P), or +inf when the closed loop is not gamma-stable."""
    if not is_gamma_stable(sys, pol, spec.gamma):
        return np.inf
    return solve_discounted_lyapunov(sys, pol, spec).cost


def exact_cost_noisy(sys: LtiSystem, pol: Policy, spec: LqrCostSpec) -> float:
    """Discounted cost under unit-covariance additive noise and x0 = 0.

    Equals gamma / (1 - gamma) * Tr(P).  Undefined at gamma = 1, where the
    prefactor diverges.
    """
    if spec.gamma >= 1.0:
        raise ValueError("noisy discounted cost is undefined at gamma = 1")
    if not is_gamma_stable(sys, pol, spec.gamma):
        return np.inf
    if spec.gamma == 0.0:
        return 0.0
    sol = solve_discounted_lyapunov(sys, pol, spec)
    return spec.gamma / (1.0 - spec.gamma) * sol.cost


def oracle_gradient(sys: LtiSystem, pol: Policy, spec: LqrCostSpec) -> np.ndarray:
    """Closed-form gradient of J_gamma with respect to the gain.

    grad = 2 [ (R + gamma B'PB) K - gamma B'PA ] Sigma, the damped-system
    specialization of the standard LQR policy gradient.
    """
    sol = solve_discounted_lyapunov(sys, pol, spec)
    g = spec.gamma
    a, b, k = sys.a, sys.b, pol.k
    return 2.0 * ((spec.r + g * b.T @ sol.p @ b) @ k - g * b.T @ sol.p @ a) @ sol.sigma


def optimal_lqr(
    sys: LtiSystem,
    spec: LqrCostSpec,
    tol: float = DEFAULT_SOLVE_TOL,
    max_iter: int = 1_000_000,
) -> tuple[Policy, float]:
    """Optimal discounted-LQR gain and cost via Riccati value iteration.

    Iterates the Riccati map of the damped pair (sqrt(gamma) A, sqrt(gamma) B)
    from P = Q until successive iterates differ by <= tol * (1 + ||P||_F)
    (the scale-relative form keeps the threshold attainable for large value
    matrices), then re-solves the Lyapunov equation at the returned gain so
    the reported cost matches exact_cost to solver precision.
    """
    g = spec.gamma
    ad = np.sqrt(g) * sys.a
    bd = np.sqrt(g) * sys.b
    p = spec.q.copy()
    for _ in range(max_iter):
        gain = np.linalg.solve(spec.r + bd.T @ p @ bd, bd.T @ p @ ad)
        p_next = spec.q + ad.T @ p @ ad - ad.T @ p @ bd @ gain
        p_next = (p_next + p_next.T) / 2.0
        if not np.all(np.isfinite(p_next)) or np.linalg.norm(p_next, "fro") > 1e100:
            raise NonStabilizableError("Riccati iteration diverged")
        if np.linalg.norm(p_next - p, "fro") <= tol * (1.0 + np.linalg.norm(p_next, "fro")):
            pol = Policy(np.linalg.solve(spec.r + bd.T @ p_next @ bd, bd.T @ p_next @ ad))
            cost = exact_cost(sys, pol, spec)
            if not np.isfinite(cost):
                raise NonStabilizableError("Riccati iteration returned an unstable gain")
            return pol, cost
        p = p_next
    raise NonStabilizableError("Riccati iteration exhausted its budget without contracting")


def margin_alpha_exact(
    cost: float, pol: Policy, spec: LqrCostSpec, conservative: bool = False
) -> float:
    """Certified relative discount increase for a policy with cost J.

    Returns alpha = s / (J - s) with s the smallest eigenvalue of Q + K'RK,
    so that the closed loop stays stable under gamma' = (1 + xi * alpha) *
    gamma for any xi < 1.  The conservative variant uses s = min eig(Q),
    which never exceeds the full rate.
    """
    if not np.isfinite(cost):
        raise ValueError("margin needs a finite cost; check stability first")
    if conservative:
        s = min_eig_sym(spec.q)
    else:
        s = min_eig_sym(spec.q + pol.k.T @ spec.r @ pol.k)
    if cost <= s:
        raise DegenerateInstanceError(
            f"cost {cost} does not exceed the penalty floor {s}; margin undefined"
        )
    return s / (cost - s)

"""Run configuration: a small, strictly validated JSON schema.

Unknown keys are errors (typos should not silently fall back to defaults),
every diagnostic carries the offending field path, and the schema is
versioned so stored configs stay interpretable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import anneal, sim
from .oracle import LtiSystem

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "default_twodim_config"]

SCHEMA_VERSION = 1

EXPERIMENTS = ("twodim", "dimscaling", "cartpole", "custom")


class ConfigError(ValueError):
    """Malformed configuration; message carries the field path."""


@dataclass
class ExperimentConfig:
    experiment: str
    variant: str
    system: LtiSystem | None
    nonlinear_name: str | None
    q: np.ndarray
    r: np.ndarray
    annealing: anneal.AnnealingConfig
    init_dist_kind: str
    init_dist_radius: float | None
    r_ini: float
    trials: int
    n_values: list[int]
    raw: dict


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}.{key}: missing required field")
    return d[key]


def _check_keys(d: dict, allowed: set[str], path: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {sorted(unknown)}")


def _number(v, path: str, positive=False, nonnegative=False) -> float:
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{path}: expected a number, got {type(v).__name__}")
    x = float(v)
    if positive and not x > 0:
        raise ConfigError(f"{path}: must be positive, got {x}")
    if nonnegative and x < 0:
        raise ConfigError(f"{path}: must be nonnegative, got {x}")
    return x


def _integer(v, path: str, minimum: int | None = None) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise ConfigError(f"{path}: expected an integer, got {type(v).__name__}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {v}")
    return v


def _matrix(v, path: str) -> np.ndarray:
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a numeric matrix ({exc})") from exc
    if a.ndim != 2:
        raise ConfigError(f"{path}: expected a 2-d matrix, got shape {a.shape}")
    return a


def _parse_penalty(v, path: str, dim: int) -> np.ndarray:
    """A penalty matrix, given explicitly or as {"scaled_identity": c}."""
    if isinstance(v, dict):
        _check_keys(v, {"scaled_identity"}, path)
        c = _number(_require(v, "scaled_identity", path), f"{path}.scaled_identity", positive=True)
        return c * np.eye(dim)
    return _matrix(v, path)


def _parse_inner_mode(v, path: str) -> anneal.InnerMode:
    if not isinstance(v, dict):
        raise ConfigError(f"{path}: expected an object")
    _check_keys(v, {"kind", "count"}, path)
    kind = _require(v, "kind", path)
    count = _integer(_require(v, "count", path), f"{path}.count", minimum=1)
    if kind == "fixed":
        return anneal.InnerMode.fixed_steps(count)
    if kind == "until_threshold":
        return anneal.InnerMode.until_threshold(count)
    raise ConfigError(f"{path}.kind: expected 'fixed' or 'until_threshold', got {kind!r}")


def parse_config(data: dict, path: str = "config") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    allowed = {
        "schema_version",
        "experiment",
        "variant",
        "system",
        "q",
        "r",
        "annealing",
        "rollout",
        "init_dist",
        "r_ini",
        "trials",
        "n_values",
    }
    _check_keys(data, allowed, path)
    version = _integer(_require(data, "schema_version", path), f"{path}.schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}.schema_version: expected {SCHEMA_VERSION}, got {version}")
    experiment = _require(data, "experiment", path)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"{path}.experiment: expected one of {EXPERIMENTS}, got {experiment!r}")
    variant = _require(data, "variant", path)
    if variant not in anneal.VARIANTS:
        raise ConfigError(f"{path}.variant: expected one of {anneal.VARIANTS}, got {variant!r}")

    system = None
    nonlinear_name = None
    sys_spec = data.get("system")
    if sys_spec is not None:
        if not isinstance(sys_spec, dict):
            raise ConfigError(f"{path}.system: expected an object")
        _check_keys(sys_spec, {"a", "b", "nonlinear"}, f"{path}.system")
        if "nonlinear" in sys_spec:
            nonlinear_name = sys_spec["nonlinear"]
            if nonlinear_name != "cartpole":
                raise ConfigError(
                    f"{path}.system.nonlinear: only 'cartpole' is built in, got {nonlinear_name!r}"
                )
        else:
            a = _matrix(_require(sys_spec, "a", f"{path}.system"), f"{path}.system.a")
            b = _matrix(_require(sys_spec, "b", f"{path}.system"), f"{path}.system.b")
            try:
                system = LtiSystem(a, b)
            except ValueError as exc:
                raise ConfigError(f"{path}.system: {exc}") from exc

    if system is None and nonlinear_name is None:
        if experiment == "twodim":
            system = LtiSystem(np.array([[4.0, 3.0], [3.0, 1.5]]), np.array([[2.0], [2.0]]))
        elif experiment == "cartpole":
            nonlinear_name = "cartpole"
        elif experiment == "custom":
            raise ConfigError(f"{path}.system: custom experiments need an explicit system")
        # dimscaling builds its own random plants per dimension

    n_dim = system.n if system is not None else 4 if nonlinear_name else 2
    m_dim = system.m if system is not None else 1 if nonlinear_name else 8

    q = _parse_penalty(_require(data, "q", path), f"{path}.q", n_dim)
    r = _parse_penalty(_require(data, "r", path), f"{path}.r", m_dim)

    roll = _require(data, "rollout", path)
    if not isinstance(roll, dict):
        raise ConfigError(f"{path}.rollout: expected an object")
    _check_keys(
        roll,
        {"horizon", "eval_batch", "grad_batch", "smoothing_radius", "step_size", "seed"},
        f"{path}.rollout",
    )
    try:
        rollout_cfg = sim.RolloutConfig(
            horizon=_integer(_require(roll, "horizon", f"{path}.rollout"), f"{path}.rollout.horizon", 1),
            eval_batch=_integer(_require(roll, "eval_batch", f"{path}.rollout"), f"{path}.rollout.eval_batch", 1),
            grad_batch=_integer(_require(roll, "grad_batch", f"{path}.rollout"), f"{path}.rollout.grad_batch", 1),
            smoothing_radius=_number(
                _require(roll, "smoothing_radius", f"{path}.rollout"),
                f"{path}.rollout.smoothing_radius",
                positive=True,
            ),
            step_size=_number(
                _require(roll, "step_size", f"{path}.rollout"),
                f"{path}.rollout.step_size",
                nonnegative=True,
            ),
            seed=_integer(_require(roll, "seed", f"{path}.rollout"), f"{path}.rollout.seed"),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}.rollout: {exc}") from exc

    ann = _require(data, "annealing", path)
    if not isinstance(ann, dict):
        raise ConfigError(f"{path}.annealing: expected an object")
    _check_keys(
        ann,
        {"gamma0", "xi", "cost_threshold", "inner_mode", "max_outer"},
        f"{path}.annealing",
    )
    try:
        annealing = anneal.AnnealingConfig(
            gamma0=_number(_require(ann, "gamma0", f"{path}.annealing"), f"{path}.annealing.gamma0", positive=True),
            xi=_number(_require(ann, "xi", f"{path}.annealing"), f"{path}.annealing.xi", positive=True),
            cost_threshold=_number(
                _require(ann, "cost_threshold", f"{path}.annealing"),
                f"{path}.annealing.cost_threshold",
                positive=True,
            ),
            inner_mode=_parse_inner_mode(_require(ann, "inner_mode", f"{path}.annealing"), f"{path}.annealing.inner_mode"),
            rollout_cfg=rollout_cfg,
            max_outer=_integer(_require(ann, "max_outer", f"{path}.annealing"), f"{path}.annealing.max_outer", 1),
            variant=variant,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}.annealing: {exc}") from exc

    init = data.get("init_dist", {"kind": "gaussian"})
    if not isinstance(init, dict):
        raise ConfigError(f"{path}.init_dist: expected an object")
    _check_keys(init, {"kind", "radius"}, f"{path}.init_dist")
    kind = init.get("kind", "gaussian")
    if kind not in ("gaussian", "uniform_sphere", "uniform_box"):
        raise ConfigError(f"{path}.init_dist.kind: unknown kind {kind!r}")
    radius = init.get("radius")
    if radius is not None:
        radius = _number(radius, f"{path}.init_dist.radius", positive=True)

    r_ini = data.get("r_ini", 0.3)
    r_ini = _number(r_ini, f"{path}.r_ini", positive=True)

    trials = _integer(data.get("trials", 1), f"{path}.trials", minimum=1)
    n_values = data.get("n_values", [4, 8, 16, 32])
    if not isinstance(n_values, list) or not all(isinstance(v, int) and v >= 1 for v in n_values):
        raise ConfigError(f"{path}.n_values: expected a list of positive integers")

    return ExperimentConfig(
        experiment=experiment,
        variant=variant,
        system=system,
        nonlinear_name=nonlinear_name,
        q=q,
        r=r,
        annealing=annealing,
        init_dist_kind=kind,
        init_dist_radius=radius,
        r_ini=r_ini,
        trials=trials,
        n_values=list(n_values),
        raw=data,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {p} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(data, path=str(p))


def default_twodim_config(variant: str = "sampled", seed: int = 0) -> dict:
    """The two-dimensional benchmark with its published run parameters."""
    step_size = 1e-2 if variant == "exact" else 1e-3
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": "twodim",
        "variant": variant,
        "system": {"a": [[4.0, 3.0], [3.0, 1.5]], "b": [[2.0], [2.0]]},
        "q": {"scaled_identity": 1.0},
        "r": [[2.0]],
        "annealing": {
            "gamma0": 1e-3,
            "xi": 0.9,
            "cost_threshold": 26.0,
            "inner_mode": {"kind": "fixed", "count": 1},
            "max_outer": 150,
        },
        "rollout": {
            "horizon": 100,
            "eval_batch": 20,
            "grad_batch": 20,
            "smoothing_radius": 2e-3,
            "step_size": step_size,
            "seed": seed,
        },
        "init_dist": {"kind": "gaussian"},
        "trials": 1,
    }

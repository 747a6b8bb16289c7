"""Result emission: trace / study / roa CSV files and a run-metadata JSON.

Numbers are written with 17 significant digits (round-trip exact for IEEE
doubles) so that reruns with the same config and seed produce byte-identical
CSV files.  Wall-clock timing lives only in the metadata file.
"""

from __future__ import annotations

import json
import platform
from pathlib import Path

import numpy as np

from .anneal import AnnealingTrace
from .experiments import DimScalingResult, RoaResult
from .oracle import LtiSystem, spectral_radius

__all__ = ["fmt", "write_trace_csv", "write_study_csv", "write_roa_csv", "write_meta"]


def fmt(x: float) -> str:
    """17-significant-digit decimal form; inf and nan spelled out."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def write_trace_csv(path: str | Path, trace: AnnealingTrace, plant: LtiSystem | None = None) -> None:
    """Per-iteration trace; one row per outer iteration.

    Columns: k, gamma, cost, alpha, inner_iters, rollouts, rollouts_cum and,
    only when the plant is known to the harness, gamma_opt = 1 / rho(A - B
    K)^2 for the policy in effect at the start of iteration k (K = 0 at
    k = 0).  The column is omitted entirely in model-free runs.
    """
    rows = []
    header = ["k", "gamma", "cost", "alpha", "inner_iters", "rollouts", "rollouts_cum"]
    with_opt = plant is not None
    if with_opt:
        header.append("gamma_opt")
    cum = 0
    prev_policy = None
    for rec in trace.records:
        cum += rec.rollouts
        row = [
            str(rec.k),
            fmt(rec.gamma),
            fmt(rec.cost),
            fmt(rec.alpha),
            str(rec.inner_iters),
            str(rec.rollouts),
            str(cum),
        ]
        if with_opt:
            k_in_effect = prev_policy if prev_policy is not None else np.zeros_like(rec.policy)
            rho = spectral_radius(plant.a - plant.b @ k_in_effect)
            gamma_opt = np.inf if rho == 0.0 else 1.0 / rho**2
            row.append(fmt(gamma_opt))
        prev_policy = rec.policy
        rows.append(",".join(row))
    Path(path).write_text("\n".join([",".join(header)] + rows) + "\n")


def write_study_csv(path: str | Path, result: DimScalingResult) -> None:
    """Dimension-scaling table: one row per state dimension."""
    header = "n,mean_rollouts,completed,excluded"
    rows = [
        f"{n},{fmt(mr)},{c},{e}"
        for n, mr, c, e in zip(
            result.n_values, result.mean_rollouts, result.completed, result.excluded
        )
    ]
    lines = [header] + rows
    if result.slope is not None:
        lines.append(f"# loglog_slope,{fmt(result.slope)}")
        lines.append(f"# loglog_intercept,{fmt(result.intercept)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_roa_csv(path: str | Path, result: RoaResult) -> None:
    """Tested radii with their all-trials-converged verdicts."""
    header = "radius,all_converged"
    rows = [
        f"{fmt(r)},{int(ok)}" for r, ok in zip(result.radius_grid, result.successes)
    ]
    rows.append(f"# r_roa,{fmt(result.r_roa)}")
    Path(path).write_text("\n".join([header] + rows) + "\n")


def write_meta(path: str | Path, *, config: dict, seed: int, wall_time: float, extra: dict | None = None) -> None:
    from . import __version__

    meta = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "seed": seed,
        "wall_time_seconds": wall_time,
        "config": config,
    }
    if extra:
        meta.update(extra)
    Path(path).write_text(json.dumps(meta, indent=2, default=str) + "\n")

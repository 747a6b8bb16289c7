"""Command-line entry points.

Subcommands:

  anneal      run one annealing experiment from a JSON config
  dimscaling  rollout-count scaling study over state dimensions
  cartpole    nonlinear annealing on the cart-pole, then a ROA estimate
  roa         region-of-attraction estimate for a stored (or baseline) gain
  verify      randomized oracle property suites; nonzero exit on failure

Every run writes CSV results plus a meta.json; CSVs are byte-reproducible
for a fixed (config, seed).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import anneal, config as cfgmod, csvio, experiments, sim
from .oracle import (
    LqrCostSpec,
    LtiSystem,
    Policy,
    exact_cost,
    is_gamma_stable,
    margin_alpha_exact,
    min_eig_sym,
    optimal_lqr,
    oracle_gradient,
    solve_discounted_lyapunov,
    spectral_radius,
)

__all__ = ["main", "cli_main"]

_CARTPOLE_DEFAULTS = {
    "gamma0": 0.01,
    "xi": 1.0,
    "horizon": 6000,
    "eval_batch": 20,
    "grad_batch": 20,
    "smoothing_radius": 0.01,
    "step_size": 1e-3,
    "r_ini": 0.3,
    "cost_threshold": 900.0,
    "max_inner": 100,
    "max_outer": 4000,
}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_env(exp: cfgmod.ExperimentConfig, rollout_cfg: sim.RolloutConfig):
    if exp.variant == "nonlinear" or exp.nonlinear_name:
        nl = sim.cartpole_system()
        return anneal.make_environment(
            "nonlinear",
            nonlinear=nl,
            q=exp.q,
            r=exp.r,
            rollout_cfg=rollout_cfg,
            r_ini=exp.r_ini,
        )
    if exp.init_dist_kind == "gaussian":
        dist = sim.InitialStateDist.gaussian(exp.system.n)
    elif exp.init_dist_kind == "uniform_sphere":
        dist = sim.InitialStateDist.uniform_sphere(exp.system.n, exp.init_dist_radius)
    else:
        dist = sim.InitialStateDist.uniform_box(exp.system.n, exp.init_dist_radius or 0.5)
    return anneal.make_environment(
        exp.variant,
        plant=exp.system,
        q=exp.q,
        r=exp.r,
        rollout_cfg=rollout_cfg,
        init_dist=dist,
    )


def _cmd_anneal(args) -> int:
    exp = cfgmod.load_config(args.config)
    if args.mode:
        exp = cfgmod.parse_config(
            {**exp.raw, "variant": args.mode}, path=str(args.config)
        )
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else exp.annealing.rollout_cfg.seed
    t0 = time.perf_counter()
    trials = args.trials or exp.trials
    completed = 0
    for trial in range(trials):
        trial_seed = seed + trial
        rollout_cfg = sim.RolloutConfig(
            horizon=exp.annealing.rollout_cfg.horizon,
            eval_batch=exp.annealing.rollout_cfg.eval_batch,
            grad_batch=exp.annealing.rollout_cfg.grad_batch,
            smoothing_radius=exp.annealing.rollout_cfg.smoothing_radius,
            step_size=exp.annealing.rollout_cfg.step_size,
            seed=trial_seed,
        )
        run_cfg = anneal.AnnealingConfig(
            gamma0=exp.annealing.gamma0,
            xi=exp.annealing.xi,
            cost_threshold=exp.annealing.cost_threshold,
            inner_mode=exp.annealing.inner_mode,
            rollout_cfg=rollout_cfg,
            max_outer=exp.annealing.max_outer,
            variant=exp.variant,
        )
        env = _build_env(exp, rollout_cfg)
        suffix = "" if trials == 1 else f"_{trial}"
        try:
            trace = anneal.run_annealing(env, run_cfg)
        except (anneal.AnnealingStallError, anneal.DegenerateEstimateError) as exc:
            print(f"trial {trial}: failed: {exc}", file=sys.stderr)
            trace = getattr(exc, "trace", None)
            if trace is not None:
                csvio.write_trace_csv(out / f"trace{suffix}.csv", trace, plant=exp.system)
            continue
        completed += 1
        csvio.write_trace_csv(out / f"trace{suffix}.csv", trace, plant=exp.system)
        final_rho = (
            spectral_radius(exp.system.a - exp.system.b @ trace.final_policy.k)
            if exp.system is not None
            else None
        )
        print(
            f"trial {trial}: reached_gamma_1={trace.reached_target} "
            f"iters={len(trace.records)} rollouts={trace.total_rollouts}"
            + (f" rho_closed_loop={final_rho:.6f}" if final_rho is not None else "")
        )
        np.savetxt(out / f"gain{suffix}.csv", trace.final_policy.k, delimiter=",")
    csvio.write_meta(
        out / "meta.json",
        config=exp.raw,
        seed=seed,
        wall_time=time.perf_counter() - t0,
        extra={"trials": trials, "completed": completed, "mode": exp.variant},
    )
    return 0 if completed == trials else 1


def _cmd_dimscaling(args) -> int:
    out = _out_dir(args)
    n_values = [int(v) for v in args.n_values.split(",")]
    t0 = time.perf_counter()
    try:
        result = experiments.run_dim_scaling(
            n_values=n_values, trials=args.trials, seed=args.seed
        )
    except experiments.StudyFailure as exc:
        print(f"study failed: {exc}", file=sys.stderr)
        return 1
    csvio.write_study_csv(out / "study.csv", result)
    csvio.write_meta(
        out / "meta.json",
        config={"n_values": n_values, "trials": args.trials},
        seed=args.seed,
        wall_time=time.perf_counter() - t0,
        extra={"slope": result.slope},
    )
    print(f"slope={result.slope}")
    return 0


def _roa_grid(args) -> np.ndarray:
    return np.round(np.arange(args.grid_step, args.grid_max + 1e-12, args.grid_step), 10)


def _cmd_cartpole(args) -> int:
    out = _out_dir(args)
    d = _CARTPOLE_DEFAULTS
    rollout_cfg = sim.RolloutConfig(
        horizon=args.horizon,
        eval_batch=d["eval_batch"],
        grad_batch=d["grad_batch"],
        smoothing_radius=d["smoothing_radius"],
        step_size=args.step_size,
        seed=args.seed,
    )
    run_cfg = anneal.AnnealingConfig(
        gamma0=d["gamma0"],
        xi=d["xi"],
        cost_threshold=args.cost_threshold,
        inner_mode=anneal.InnerMode.until_threshold(d["max_inner"]),
        rollout_cfg=rollout_cfg,
        max_outer=args.max_outer,
        variant="nonlinear",
    )
    nl = sim.cartpole_system()
    env = anneal.make_environment(
        "nonlinear",
        nonlinear=nl,
        q=2.0 * np.eye(4),
        r=np.array([[1.0]]),
        rollout_cfg=rollout_cfg,
        r_ini=args.r_ini,
    )
    t0 = time.perf_counter()
    try:
        trace = anneal.run_annealing(env, run_cfg)
    except (anneal.AnnealingStallError, anneal.DegenerateEstimateError) as exc:
        print(f"annealing failed: {exc}", file=sys.stderr)
        return 1
    csvio.write_trace_csv(out / "trace.csv", trace)
    np.savetxt(out / "gain.csv", trace.final_policy.k, delimiter=",")
    roa = experiments.estimate_roa(
        nl,
        trace.final_policy,
        _roa_grid(args),
        trials_per_radius=args.roa_trials,
        horizon=args.roa_horizon,
        seed=args.seed,
    )
    roa.r_ini = args.r_ini
    csvio.write_roa_csv(out / "roa.csv", roa)
    csvio.write_meta(
        out / "meta.json",
        config={"r_ini": args.r_ini, "seed": args.seed, "step_size": args.step_size,
                "horizon": args.horizon, "cost_threshold": args.cost_threshold},
        seed=args.seed,
        wall_time=time.perf_counter() - t0,
        extra={
            "reached_gamma_1": trace.reached_target,
            "iterations": len(trace.records),
            "rollouts": trace.total_rollouts,
            "r_roa": roa.r_roa,
        },
    )
    print(f"reached_gamma_1={trace.reached_target} iters={len(trace.records)} r_roa={roa.r_roa}")
    return 0 if trace.reached_target else 1


def _cmd_roa(args) -> int:
    out = _out_dir(args)
    nl = sim.cartpole_system()
    if args.lqr_baseline:
        pol = experiments.cartpole_lqr_baseline()
    elif args.gain:
        pol = Policy(np.loadtxt(args.gain, delimiter=",").reshape(1, 4))
    else:
        print("need --gain FILE or --lqr-baseline", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    roa = experiments.estimate_roa(
        nl,
        pol,
        _roa_grid(args),
        trials_per_radius=args.roa_trials,
        horizon=args.roa_horizon,
        seed=args.seed,
    )
    csvio.write_roa_csv(out / "roa.csv", roa)
    csvio.write_meta(
        out / "meta.json",
        config={"gain": args.gain, "lqr_baseline": args.lqr_baseline},
        seed=args.seed,
        wall_time=time.perf_counter() - t0,
        extra={"r_roa": roa.r_roa},
    )
    print(f"r_roa={roa.r_roa}")
    return 0


def _verify_report(seed: int, quick: bool) -> tuple[str, bool]:
    """Randomized oracle property suites; returns (report text, all passed)."""
    rng = sim.derive_rng(seed, 999)
    n_instances = 200 if quick else 1000
    lines = []
    ok_all = True

    def emit(name: str, ok: bool, detail: str):
        nonlocal ok_all
        ok_all &= ok
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    # stability margin certificates
    failures = 0
    ineq_failures = 0
    for i in range(n_instances):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 3))
        plant = LtiSystem(rng.standard_normal((n, n)), rng.standard_normal((n, m)))
        pol = Policy(0.3 * rng.standard_normal((m, n)))
        rho = spectral_radius(plant.a - plant.b @ pol.k)
        gamma = float(min(rng.uniform(0.05, 0.95) / max(rho, 1e-6) ** 2, 0.999))
        spec = LqrCostSpec(np.eye(n), np.eye(m), gamma)
        cost = exact_cost(plant, pol, spec)
        alpha = margin_alpha_exact(cost, pol, spec)
        for xi in (0.5, 0.9):
            gamma_next = (1.0 + xi * alpha) * gamma
            if not is_gamma_stable(plant, pol, gamma_next):
                failures += 1
            sol = solve_discounted_lyapunov(plant, pol, spec)
            gap = spec.q + pol.k.T @ spec.r @ pol.k - (1.0 - gamma / gamma_next) * sol.p
            if min_eig_sym(gap) <= 0.0:
                ineq_failures += 1
    emit(
        "margin-certificate",
        failures == 0,
        f"{n_instances} instances x xi in (0.5, 0.9), {failures} stability violations",
    )
    emit(
        "lyapunov-margin-inequality",
        ineq_failures == 0,
        f"{ineq_failures} matrix-inequality violations",
    )

    # optimal-cost monotonicity in gamma
    violations = 0
    n_mono = 50 if quick else 200
    for i in range(n_mono):
        n = int(rng.integers(2, 4))
        plant = experiments.generate_random_system(n, 2, rng)
        g1, g2 = sorted(rng.uniform(0.05, 1.0, size=2))
        if g2 - g1 < 1e-3:
            g2 = min(1.0, g1 + 1e-3)
        _, j1 = optimal_lqr(plant, LqrCostSpec(np.eye(n), np.eye(2), g1))
        _, j2 = optimal_lqr(plant, LqrCostSpec(np.eye(n), np.eye(2), g2))
        if not j1 < j2:
            violations += 1
    emit("optimal-cost-monotone", violations == 0, f"{n_mono} pairs, {violations} violations")

    # closed-form gradient vs central finite differences
    bad = 0
    n_grad = 30 if quick else 100
    for i in range(n_grad):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 3))
        plant = LtiSystem(rng.standard_normal((n, n)), rng.standard_normal((n, m)))
        pol = Policy(0.2 * rng.standard_normal((m, n)))
        rho = spectral_radius(plant.a - plant.b @ pol.k)
        gamma = float(min(rng.uniform(0.1, 0.9) / max(rho, 1e-6) ** 2, 0.99))
        spec = LqrCostSpec(np.eye(n), np.eye(m), gamma)
        grad = oracle_gradient(plant, pol, spec)
        fd = np.zeros_like(grad)
        h = 1e-6
        for a in range(m):
            for b_ in range(n):
                dk = np.zeros((m, n))
                dk[a, b_] = h
                fd[a, b_] = (
                    exact_cost(plant, Policy(pol.k + dk), spec)
                    - exact_cost(plant, Policy(pol.k - dk), spec)
                ) / (2 * h)
        if np.linalg.norm(grad - fd) > 1e-5 * (1.0 + np.linalg.norm(fd)):
            bad += 1
    emit("gradient-vs-finite-diff", bad == 0, f"{n_grad} instances, {bad} mismatches")

    return "\n".join(lines) + "\n", ok_all


def _cmd_verify(args) -> int:
    report, ok = _verify_report(args.seed, args.quick)
    sys.stdout.write(report)
    sys.stdout.write("ALL PASS\n" if ok else "FAILURES PRESENT\n")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgstab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("anneal", help="run an annealing experiment from a config file")
    pa.add_argument("--config", required=True)
    pa.add_argument("--seed", type=int, default=None)
    pa.add_argument("--out", default="out")
    pa.add_argument("--trials", type=int, default=None)
    pa.add_argument("--mode", choices=list(anneal.VARIANTS), default=None)
    pa.set_defaults(func=_cmd_anneal)

    pd = sub.add_parser("dimscaling", help="rollout scaling vs state dimension")
    pd.add_argument("--n-values", default="4,8,16,32")
    pd.add_argument("--trials", type=int, default=10)
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--out", default="out")
    pd.set_defaults(func=_cmd_dimscaling)

    pc = sub.add_parser("cartpole", help="nonlinear annealing on the cart-pole")
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--out", default="out")
    pc.add_argument("--r-ini", dest="r_ini", type=float, default=_CARTPOLE_DEFAULTS["r_ini"])
    pc.add_argument("--horizon", type=int, default=_CARTPOLE_DEFAULTS["horizon"])
    pc.add_argument("--step-size", dest="step_size", type=float, default=_CARTPOLE_DEFAULTS["step_size"])
    pc.add_argument("--cost-threshold", dest="cost_threshold", type=float, default=_CARTPOLE_DEFAULTS["cost_threshold"])
    pc.add_argument("--max-outer", dest="max_outer", type=int, default=_CARTPOLE_DEFAULTS["max_outer"])
    pc.add_argument("--roa-trials", type=int, default=1000)
    pc.add_argument("--roa-horizon", type=int, default=2000)
    pc.add_argument("--grid-step", type=float, default=0.02)
    pc.add_argument("--grid-max", type=float, default=1.5)
    pc.set_defaults(func=_cmd_cartpole)

    pr = sub.add_parser("roa", help="region-of-attraction estimate on the cart-pole")
    pr.add_argument("--gain", default=None, help="CSV file with a 1x4 gain row")
    pr.add_argument("--lqr-baseline", action="store_true")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", default="out")
    pr.add_argument("--roa-trials", type=int, default=1000)
    pr.add_argument("--roa-horizon", type=int, default=2000)
    pr.add_argument("--grid-step", type=float, default=0.02)
    pr.add_argument("--grid-max", type=float, default=1.5)
    pr.set_defaults(func=_cmd_roa)

    pv = sub.add_parser("verify", help="randomized oracle property suites")
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--quick", action="store_true")
    pv.set_defaults(func=_cmd_verify)

    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())

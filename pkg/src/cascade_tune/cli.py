"""Command-line front end.

Subcommands: simulate, tune, compare, train-study, fit-ks.  Every output
file is written to a temporary name and atomically renamed, so files are
either complete or absent.  Exit codes: 0 success, 1 config error,
2 unstable trace, 3 tuner failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import statistics
import sys
import tempfile

import numpy as np

from .baselines import (TunerError, grid_search, itae_tune, relay_tune,
                        write_surface_csv, ziegler_nichols_tune)
from .bo import BoConfig, sequential_tune
from .config import ConfigError, RunConfig, load_config
from .control import (OperatingMode, read_trace_csv, simulate_closed_loop,
                      write_trace_csv)
from .metrics import (position_cost, position_metrics, speed_cost,
                      speed_metrics)
from .objectives import TuningProblem
from .plant import fit_axial_stiffness

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNSTABLE = 2
EXIT_TUNER = 3

GAINS_CSV_HEADER = ["method", "K_p", "K_v", "K_i", "cost", "evaluations"]
BO_LOG_HEADER = ["stage", "iteration", "phase", "candidate", "cost",
                 "incumbent", "incumbent_cost", "acquisition"]


def _atomic_write(path, write_fn):
    d = os.path.dirname(str(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    return repr(float(v))


def _problem(cfg: RunConfig) -> TuningProblem:
    return TuningProblem(plant=cfg.plant, command=cfg.motion,
                         weights=cfg.weights, options=cfg.sim,
                         base_gains=cfg.gains)


def _bo_logger(rows, stage):
    def log(it):
        cand = "/".join(_fmt(v) for v in it.point)
        inc = "/".join(_fmt(v) for v in it.incumbent)
        acq = "" if it.acquisition is None else _fmt(it.acquisition)
        print(f"[bo:{stage}] iter={it.index} phase={it.phase} candidate={cand} "
              f"cost={it.cost:.6g} incumbent={inc} "
              f"incumbent_cost={it.incumbent_cost:.6g} acq={acq}")
        rows.append([stage, it.index, it.phase, cand, _fmt(it.cost), inc,
                     _fmt(it.incumbent_cost), acq])
    return log


def cmd_simulate(cfg: RunConfig, args) -> int:
    mode = OperatingMode(args.mode)
    gains = cfg.gains.with_outer(K_p=args.kp, K_v=args.kv, K_i=args.ki)
    trace = simulate_closed_loop(cfg.plant, gains, cfg.motion, mode,
                                 opts=cfg.sim,
                                 current_setpoint=cfg.current_setpoint)
    out = os.path.join(args.out, "trace.csv")
    _atomic_write(out, lambda tmp: write_trace_csv(trace, tmp))
    if trace.unstable:
        print(f"trace UNSTABLE (diverged after {trace.duration:.4g} s); wrote {out}")
        return EXIT_UNSTABLE
    if mode is OperatingMode.POSITION:
        m = position_metrics(trace)
        c = position_cost(trace, cfg.weights)
        print(f"metrics: T_p={m.T_p:.6g} h_p={m.h_p:.6g} h_ps={m.h_ps:.6g} "
              f"e_inf={m.e_inf:.6g} cost={c:.6g}")
    elif mode is OperatingMode.SPEED:
        m = speed_metrics(trace)
        c = speed_cost(trace, cfg.weights)
        print(f"metrics: T_s={m.T_s:.6g} h_s={m.h_s:.6g} e_itae={m.e_itae:.6g} "
              f"e_inf={m.e_inf:.6g} cost={c:.6g}")
    else:
        err = float(np.abs(trace.i_a - cfg.current_setpoint)[-100:].mean())
        print(f"metrics: mean current error over final samples = {err:.6g} A")
    if trace.speed_alarm:
        print("warning: motor speed exceeded the alarm threshold")
    print(f"wrote {out}")
    return EXIT_OK


def _tune_one(cfg: RunConfig, method: str, out_dir: str):
    """Run one tuner; returns (gains, cost, evaluations, extra_files)."""
    problem = _problem(cfg)
    extra = []
    if method == "grid":
        surf_s = grid_search(lambda g: problem.speed_cost(g[0], g[1]),
                             cfg.speed_grid)
        k_v, k_i = float(surf_s.argmin[0]), float(surf_s.argmin[1])
        surf_p = grid_search(lambda g: problem.position_cost(g[0], k_v, k_i),
                             cfg.position_grid)
        gains = cfg.gains.with_outer(K_p=float(surf_p.argmin[0]), K_v=k_v, K_i=k_i)
        f1 = os.path.join(out_dir, "cost_surface_speed.csv")
        f2 = os.path.join(out_dir, "cost_surface_position.csv")
        _atomic_write(f1, lambda tmp: write_surface_csv(surf_s, tmp))
        _atomic_write(f2, lambda tmp: write_surface_csv(surf_p, tmp))
        extra += [f1, f2]
        cost = surf_p.min_cost
    elif method == "bo":
        rows = []
        res = sequential_tune(problem, cfg.speed_grid, cfg.position_grid,
                              cfg.bo_speed, cfg.bo_position,
                              log=None)
        # rebuild the per-iteration rows from the stored histories
        for stage, r in (("speed", res.speed), ("position", res.position)):
            logger = _bo_logger(rows, stage)
            for it in r.iterations:
                logger(it)
        f = os.path.join(out_dir, "bo_iterations.csv")

        def write_log(tmp):
            with open(tmp, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(BO_LOG_HEADER)
                w.writerows(rows)

        _atomic_write(f, write_log)
        extra.append(f)
        gains = cfg.gains.with_outer(K_p=res.k_p, K_v=res.k_v, K_i=res.k_i)
        cost = res.position.incumbent_cost
    elif method == "zn":
        gains = ziegler_nichols_tune(cfg.plant, cfg.sim,
                                     speed_bounds=cfg.zn_speed_bounds,
                                     position_bounds=cfg.zn_position_bounds,
                                     base=cfg.gains)
        cost = problem.position_cost(gains.K_p, gains.K_v, gains.K_i)
    elif method == "relay":
        gains = relay_tune(cfg.plant, cfg.relay, cfg.sim, base=cfg.gains)
        cost = problem.position_cost(gains.K_p, gains.K_v, gains.K_i)
    elif method == "itae":
        gains, _, _ = itae_tune(problem, cfg.speed_grid, cfg.position_grid)
        cost = problem.position_cost(gains.K_p, gains.K_v, gains.K_i)
    else:
        raise ValueError(f"unknown method {method!r}")
    return gains, cost, problem.evaluations, extra


def cmd_tune(cfg: RunConfig, args) -> int:
    try:
        gains, cost, evals, extra = _tune_one(cfg, args.method, args.out)
    except TunerError as e:
        print(f"tuner failed: {e}", file=sys.stderr)
        return EXIT_TUNER
    out = os.path.join(args.out, "gains.csv")

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(GAINS_CSV_HEADER)
            w.writerow([args.method, _fmt(gains.K_p), _fmt(gains.K_v),
                        _fmt(gains.K_i), _fmt(cost), evals])

    _atomic_write(out, write)
    print(f"method={args.method} K_p={gains.K_p:.6g} K_v={gains.K_v:.6g} "
          f"K_i={gains.K_i:.6g} cost={cost:.6g} evaluations={evals}")
    for f in extra + [out]:
        print(f"wrote {f}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    methods = ["grid", "zn", "itae", "relay", "bo"]
    if args.skip:
        methods = [m for m in methods if m not in set(args.skip.split(","))]
    rows = []
    for method in methods:
        try:
            gains, cost, evals, _ = _tune_one(cfg, method, args.out)
        except TunerError as e:
            print(f"{method}: FAILED ({e})")
            rows.append([method, "", "", "", "", "", "failed"])
            continue
        trace = simulate_closed_loop(cfg.plant, gains, cfg.motion,
                                     OperatingMode.POSITION, opts=cfg.sim)
        tp = os.path.join(args.out, f"trace_{method}.csv")
        _atomic_write(tp, lambda tmp, tr=trace: write_trace_csv(tr, tmp))
        c = position_cost(trace, cfg.weights)
        rows.append([method, _fmt(gains.K_p), _fmt(gains.K_v), _fmt(gains.K_i),
                     _fmt(c), evals, "ok"])
        print(f"{method}: K_p={gains.K_p:.6g} K_v={gains.K_v:.6g} "
              f"K_i={gains.K_i:.6g} position cost={c:.6g}")
    out = os.path.join(args.out, "compare.csv")

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(GAINS_CSV_HEADER + ["status"])
            w.writerows(rows)

    _atomic_write(out, write)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train_study(cfg: RunConfig, args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    for n in sizes:
        if n > cfg.speed_grid.size:
            print(f"config error: bo.n_train_speed: {n} exceeds the "
                  f"{cfg.speed_grid.size}-node speed grid", file=sys.stderr)
            return EXIT_CONFIG
    problem = _problem(cfg)
    rows = []
    medians = []
    for n_train in sizes:
        n_bos = []
        for seed in seeds:
            cfg_s = BoConfig(n_train=n_train, n_max=cfg.bo_speed.n_max,
                             beta=cfg.bo_speed.beta,
                             repeat_threshold=cfg.bo_speed.repeat_threshold,
                             seed=seed, refit_every=cfg.bo_speed.refit_every,
                             n_starts=cfg.bo_speed.n_starts)
            cfg_p = BoConfig(n_train=cfg.bo_position.n_train,
                             n_max=cfg.bo_position.n_max,
                             beta=cfg.bo_position.beta,
                             repeat_threshold=cfg.bo_position.repeat_threshold,
                             seed=seed + 1,
                             refit_every=cfg.bo_position.refit_every,
                             n_starts=cfg.bo_position.n_starts)
            res = sequential_tune(problem, cfg.speed_grid, cfg.position_grid,
                                  cfg_s, cfg_p)
            rows.append([n_train, seed, res.speed.n_bo, res.position.n_bo,
                         _fmt(res.k_v), _fmt(res.k_i), _fmt(res.k_p)])
            n_bos.append(res.speed.n_bo)
            print(f"n_train={n_train} seed={seed} n_bo_speed={res.speed.n_bo} "
                  f"n_bo_position={res.position.n_bo} gains=({res.k_p:.6g}, "
                  f"{res.k_v:.6g}, {res.k_i:.6g})")
        medians.append([n_train, statistics.median(n_bos)])
    out = os.path.join(args.out, "train_study.csv")

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_train", "seed", "n_bo_speed", "n_bo_position",
                        "K_v", "K_i", "K_p"])
            w.writerows(rows)

    _atomic_write(out, write)
    out2 = os.path.join(args.out, "train_study_medians.csv")

    def write2(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_train", "median_n_bo_speed"])
            w.writerows(medians)

    _atomic_write(out2, write2)
    print(f"wrote {out}")
    print(f"wrote {out2}")
    return EXIT_OK


def cmd_fit_ks(cfg: RunConfig, args) -> int:
    trace = read_trace_csv(args.trace)
    est = fit_axial_stiffness(trace, cfg.plant, (args.lo, args.hi))
    out = os.path.join(args.out, "ks_fit.csv")

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["K_s_estimate", "search_lo", "search_hi"])
            w.writerow([_fmt(est), _fmt(args.lo), _fmt(args.hi)])

    _atomic_write(out, write)
    print(f"K_s estimate: {est:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cascade-tune",
        description="Simulation-backed auto-tuning of a cascaded axis controller.")
    ap.add_argument("--config", default=None, help="YAML config (default: built-in)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out", default="out", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one closed-loop simulation")
    p.add_argument("--mode", choices=[m.value for m in OperatingMode],
                   default="position")
    p.add_argument("--kp", type=float, default=None)
    p.add_argument("--kv", type=float, default=None)
    p.add_argument("--ki", type=float, default=None)

    p = sub.add_parser("tune", help="run one tuning method")
    p.add_argument("--method", choices=["bo", "grid", "zn", "relay", "itae"],
                   required=True)

    p = sub.add_parser("compare", help="run all tuners and tabulate")
    p.add_argument("--skip", default="", help="comma-separated methods to skip")

    p = sub.add_parser("train-study", help="training-size study of sequential BO")
    p.add_argument("--sizes", default="20,30,50", help="comma-separated N_train values")
    p.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9",
                   help="comma-separated seeds")

    p = sub.add_parser("fit-ks", help="least-squares stiffness fit from a step trace")
    p.add_argument("--trace", required=True, help="measured step-response trace CSV")
    p.add_argument("--lo", type=float, default=1e6)
    p.add_argument("--hi", type=float, default=1e9)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(args.out, exist_ok=True)
    handlers = {
        "simulate": cmd_simulate,
        "tune": cmd_tune,
        "compare": cmd_compare,
        "train-study": cmd_train_study,
        "fit-ks": cmd_fit_ks,
    }
    try:
        return handlers[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

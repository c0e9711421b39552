"""Command-line workbench: fit, simulate, estimate, report, bridge.

Exit codes: 0 success, 2 usage or input error, 1 numerical failure.
ADVISOR_EKF_THREADS caps batch parallelism across seeds.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from . import driver as drv
from . import scenario as scn
from .errors import AdvisorError
from .logs import EstimationLog, TrajectoryLog


class InputError(Exception):
    """Bad user input: missing file, malformed JSON, invalid option (exit 2)."""


@dataclass
class RunManifest:
    """Batch run description: scenario source, seeds, output directory."""

    scenario_path: str | None
    preset: str | None
    seeds: list[int]
    out_dir: Path
    prefix: str


def _load_scenario(path: str | None, preset: str | None, speed: float | None,
                   seed: int | None = None) -> scn.ScenarioConfig:
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InputError(f"scenario file not found: {p}")
        try:
            cfg = scn.ScenarioConfig.load(p)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed scenario file {p}: {exc}")
    elif preset is not None:
        if preset not in scn.PRESETS:
            raise InputError(
                f"unknown preset {preset!r}; choose from {sorted(scn.PRESETS)}"
            )
        factory = scn.PRESETS[preset]
        if preset == "identification" and speed is not None:
            cfg = factory(speed=speed)
        else:
            cfg = factory()
    else:
        cfg = scn.default_scenario()
    if seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=seed)
    return cfg


def _load_log(path: str) -> TrajectoryLog:
    p = Path(path)
    if not p.exists():
        raise InputError(f"trajectory log not found: {p}")
    try:
        return TrajectoryLog.load(p)
    except (json.JSONDecodeError, ValueError, KeyError) as exc:
        raise InputError(f"malformed trajectory log {p}: {exc}")


def _parse_int_tuple(text: str, n: int, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"{what} must be {n} comma-separated integers")
    if len(values) != n:
        raise InputError(f"{what} must have exactly {n} entries")
    return values


def _parse_float_list(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"{what} must be comma-separated numbers")


def _parse_seed_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise InputError("--seeds must be comma-separated integers")


# --- fit ----------------------------------------------------------------------

def cmd_fit(args: argparse.Namespace) -> int:
    log = _load_log(args.log)
    cfg = _load_scenario(args.scenario, None, None) if args.scenario else None
    track = cfg.track if cfg else None
    params = cfg.vehicle if cfg else scn.VehicleParams()
    if args.model == "two-point":
        report = drv.fit_two_point(log, params, track)
    else:
        if args.select_order:
            max_orders = _parse_int_tuple(args.max_orders, 4, "--max-orders")
            orders = drv.select_order(log, max_orders, params, track)
            print(f"selected orders: {orders}")
        else:
            orders = _parse_int_tuple(args.orders, 4, "--orders")
        report = drv.fit_generalized(log, orders, params, track)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    ac = analysis.autocorrelation(report.residuals, max_lag=min(50, len(report.residuals) - 1))
    ac_path = out.with_name(out.stem + "_autocorr.csv")
    with open(ac_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag", "value", "lo", "hi"])
        for lag, value in zip(ac.lags, ac.values):
            writer.writerow([int(lag), value, -ac.conf_bound, ac.conf_bound])
    print(f"{report.model} fit: rmse={report.rmse:.3e} r2={report.r2:.4f}")
    print(f"wrote {out} and {ac_path}")
    return 0


# --- simulate -------------------------------------------------------------------

def _simulate_one(cfg_dict: dict, seed: int, out_path: str) -> str:
    from dataclasses import replace

    cfg = replace(scn.ScenarioConfig.from_dict(cfg_dict), seed=seed)
    log = scn.run_closed_loop(cfg)
    log.save(out_path)
    return out_path


def _max_workers(n_jobs: int) -> int:
    cap = os.environ.get("ADVISOR_EKF_THREADS")
    if cap:
        try:
            return max(1, min(n_jobs, int(cap)))
        except ValueError:
            raise InputError("ADVISOR_EKF_THREADS must be an integer")
    return max(1, min(n_jobs, os.cpu_count() or 1))


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_scenario(args.scenario, args.preset, args.speed)
    seeds = (
        _parse_seed_list(args.seeds)
        if args.seeds
        else [args.seed if args.seed is not None else cfg.seed]
    )
    if len(set(seeds)) != len(seeds):
        raise InputError("seeds must be unique")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.scenario, args.preset, seeds, out_dir, args.prefix)
    cfg_dict = cfg.to_dict()
    jobs = [
        (cfg_dict, seed, str(out_dir / f"{manifest.prefix}_seed{seed:03d}.traj.jsonl"))
        for seed in seeds
    ]
    if len(jobs) == 1:
        paths = [_simulate_one(*jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=_max_workers(len(jobs))) as pool:
            paths = list(pool.map(_simulate_one, *zip(*jobs)))
    scenario_out = out_dir / f"{manifest.prefix}_scenario.json"
    cfg.save(scenario_out)
    for path in paths:
        print(f"wrote {path}")
    print(f"wrote {scenario_out}")
    return 0


# --- estimate -------------------------------------------------------------------

def cmd_estimate(args: argparse.Namespace) -> int:
    log = _load_log(args.log)
    fit_path = Path(args.fit)
    if not fit_path.exists():
        raise InputError(f"fit file not found: {fit_path}")
    try:
        fit = drv.load_fit(fit_path)
    except (json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"malformed fit file {fit_path}: {exc}")
    if fit.model != "generalized" or fit.params.orders != (2, 3, 0, 1):
        raise InputError("estimation requires a generalized fit with orders (2,3,0,1)")
    cfg = _load_scenario(args.scenario, None, None) if args.scenario else scn.default_scenario()
    hypotheses = (
        _parse_float_list(args.hypotheses, "--hypotheses")
        if args.hypotheses
        else cfg.hypotheses
    )
    est = scn.run_estimation(
        log,
        fit.params,
        cfg.vehicle,
        cfg.noise,
        hypotheses,
        use_human=not args.no_human,
        jacobian_mode=args.jacobian,
        nu_seed=args.nu_seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    est.save(out)
    summary = scn.lateral_error_series(est)
    final_weights = est.records[-1].weights
    print(
        f"steady-state lateral error: mean={summary.steady_mean:.4f} m "
        f"rmse={summary.steady_rmse:.4f} m std={summary.steady_std:.4f} m"
    )
    print(f"final weights: {[round(w, 6) for w in final_weights]}")
    print(f"wrote {out}")
    return 0


# --- report ---------------------------------------------------------------------

def _group_by_label(paths: list[Path], suffix: str) -> dict[str, list[Path]]:
    groups: dict[str, list[Path]] = {}
    for path in paths:
        name = path.name[: -len(suffix)]
        label = name.split("__")[0]
        groups.setdefault(label, []).append(path)
    return groups


def cmd_report(args: argparse.Namespace) -> int:
    src = Path(args.directory)
    if not src.is_dir():
        raise InputError(f"not a directory: {src}")
    est_paths = sorted(src.glob("*.est.jsonl"))
    fit_paths = sorted(src.glob("*.fit.json"))
    if not est_paths and not fit_paths:
        raise InputError(f"no .est.jsonl or .fit.json files in {src}")
    out_dir = Path(args.out) if args.out else src
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _load_scenario(args.scenario, None, None) if args.scenario else scn.default_scenario()

    wrote = []
    if est_paths:
        groups = _group_by_label(est_paths, ".est.jsonl")
        table2 = out_dir / "table2.csv"
        with open(table2, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "runs", "mean_m", "std_m"])
            for label, paths in sorted(groups.items()):
                means = []
                for path in paths:
                    summary = scn.lateral_error_series(EstimationLog.load(path))
                    means.append(summary.steady_mean)
                writer.writerow(
                    [label, len(means), float(np.mean(means)), float(np.std(means))]
                )
        wrote.append(table2)
        # lateral-error evolution across runs, per label
        for label, paths in sorted(groups.items()):
            logs = [EstimationLog.load(p) for p in paths]
            n = min(len(lg) for lg in logs)
            errs = np.array([lg.lat_err[:n] for lg in logs])
            t = logs[0].t[:n]
            evo = out_dir / f"{label}__lat_err_evolution.csv"
            with open(evo, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t", "mean_err", "std_err"])
                for i in range(n):
                    writer.writerow([t[i], errs[:, i].mean(), errs[:, i].std()])
            wrote.append(evo)

    # Table-1-style model comparison wherever a label has both fits and a
    # validation log: <label>__two_point.fit.json, <label>__generalized.fit.json,
    # <label>__validation.traj.jsonl
    fit_groups = _group_by_label(fit_paths, ".fit.json")
    rows = []
    for label in sorted(fit_groups):
        tp_path = src / f"{label}__two_point.fit.json"
        gen_path = src / f"{label}__generalized.fit.json"
        val_path = src / f"{label}__validation.traj.jsonl"
        if not (tp_path.exists() and gen_path.exists() and val_path.exists()):
            continue
        tp = drv.load_fit(tp_path)
        gen = drv.load_fit(gen_path)
        val = TrajectoryLog.load(val_path)
        phi, omega, xi3, delta = drv.log_signals(val, cfg.vehicle, cfg.track)
        pred_tp, act_tp = drv.predict_two_point(tp.gains, cfg.vehicle, phi, omega, xi3, delta)
        pred_gen, act_gen = drv.predict_generalized(gen.params, phi, omega, xi3, delta)
        rmse_tp = analysis.rmse(pred_tp, act_tp)
        rmse_gen = analysis.rmse(pred_gen, act_gen)
        rows.append(
            [
                label,
                "two_point",
                rmse_tp,
                analysis.r_squared(pred_tp, act_tp),
                "",
            ]
        )
        rows.append(
            [
                label,
                "generalized",
                rmse_gen,
                analysis.r_squared(pred_gen, act_gen),
                analysis.rmse_decrease(rmse_tp, rmse_gen),
            ]
        )
        overlay = out_dir / f"{label}__steering_overlay.csv"
        warm = max(gen.params.max_order, 1)
        with open(overlay, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "actual", "two_point", "generalized"])
            t = val["t"]
            # two-point predictions start at row 1, generalized at max_order
            for i in range(len(pred_gen)):
                k = warm + i
                writer.writerow([t[k], act_gen[i], pred_tp[k - 1], pred_gen[i]])
        wrote.append(overlay)
        resid = act_gen - pred_gen
        ac = analysis.autocorrelation(resid, max_lag=min(50, len(resid) - 1))
        ac_path = out_dir / f"{label}__validation_autocorr.csv"
        with open(ac_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lag", "value", "lo", "hi"])
            for lag, value in zip(ac.lags, ac.values):
                writer.writerow([int(lag), value, -ac.conf_bound, ac.conf_bound])
        wrote.append(ac_path)
    if rows:
        table1 = out_dir / "table1.csv"
        with open(table1, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["driver_id", "model", "rmse", "r2", "rmse_dec"])
            writer.writerows(rows)
        wrote.append(table1)
    for path in wrote:
        print(f"wrote {path}")
    return 0


def cmd_bridge(args: argparse.Namespace) -> int:
    from .bridge import serve_forever

    host, _, port = args.bind.rpartition(":")
    try:
        serve_forever(host or "127.0.0.1", int(port))
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advisor",
        description="Driver-in-the-loop lane state estimation workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a steering model to a trajectory log")
    p_fit.add_argument("log")
    p_fit.add_argument("--model", choices=["two-point", "generalized"], default="generalized")
    p_fit.add_argument("--orders", default="2,3,0,1")
    p_fit.add_argument("--select-order", action="store_true")
    p_fit.add_argument("--max-orders", default="6,6,6,6")
    p_fit.add_argument("--scenario", help="scenario JSON supplying track geometry")
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="run the closed-loop simulator")
    p_sim.add_argument("--scenario")
    p_sim.add_argument("--preset", choices=sorted(scn.PRESETS))
    p_sim.add_argument("--speed", type=float, help="nominal speed for the identification preset")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--seeds", help="comma-separated seed list (parallel batch)")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--prefix", default="run")
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="run the GMM-EKF over a trajectory log")
    p_est.add_argument("log")
    p_est.add_argument("fit")
    p_est.add_argument("--scenario")
    p_est.add_argument("--hypotheses", help='comma-separated bias hypotheses, e.g. "0,-1.8"')
    p_est.add_argument("--no-human", action="store_true", help="drop the steering channel")
    p_est.add_argument("--jacobian", choices=["paper", "exact"], default="exact")
    p_est.add_argument("--nu-seed", type=int, default=0)
    p_est.add_argument("--out", required=True)
    p_est.set_defaults(func=cmd_estimate)

    p_rep = sub.add_parser("report", help="aggregate fits and estimation logs into CSV tables")
    p_rep.add_argument("directory")
    p_rep.add_argument("--scenario")
    p_rep.add_argument("--out")
    p_rep.set_defaults(func=cmd_report)

    p_br = sub.add_parser("bridge", help="serve the live cockpit WebSocket bridge")
    p_br.add_argument("--bind", default="127.0.0.1:8742")
    p_br.set_defaults(func=cmd_bridge)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AdvisorError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

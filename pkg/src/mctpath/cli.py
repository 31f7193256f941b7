"""Command-line entry point: ``mctpath <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2

log = logging.getLogger("mctpath")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config(p):
    p.add_argument("--config", help="JSON config file, or - for standard input")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a scalar config key (repeatable)")


def build_parser():
    parser = _Parser(prog="mctpath", description="Depth path planning and tracking for a moored current turbine.")
    parser.add_argument("--version", action="version",
                        version=f"mctpath {__version__} (python {platform.python_version()}, numpy {np.__version__})")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-env", help="write a synthetic current field as CSV")
    p.add_argument("--kind", required=True, choices=["low", "high", "migrating"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=86400.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gp-fit", help="fit a GP current model to an ADCP CSV")
    p.add_argument("--data", required=True, help="CSV with time_s,depth_m,speed_mps")
    p.add_argument("--out", required=True)
    p.add_argument("--optimize", action="store_true", help="grid-search hyperparameters")
    p.add_argument("--max-points", type=int, default=1500,
                   help="subsample observations beyond this many (evenly spaced)")

    p = sub.add_parser("export-model", help="write the reference plant model as JSON")
    _add_config(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-planner", help="train the DQN waypoint planner")
    _add_config(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="optional CSV of per-episode return/loss/epsilon")

    p = sub.add_parser("plan", help="greedy waypoint path from a trained planner")
    _add_config(p)
    p.add_argument("--planner", "--net", dest="planner", required=True, help="trained planner JSON")
    p.add_argument("--field", help="current field CSV to plan on (default: the configured environment)")
    p.add_argument("--z0", type=float, default=50.0)
    p.add_argument("--horizon", type=int, default=288)
    p.add_argument("--out", required=True)

    p = sub.add_parser("track", help="MPC tracking of a depth reference")
    _add_config(p)
    p.add_argument("--model", required=True, help="plant model JSON")
    p.add_argument("--ref", required=True, help="CSV with time_s,depth_m")
    p.add_argument("--out", required=True)

    for name, text in (("simulate", "closed-loop planned run"),
                       ("compare-baseline", "planned run versus hold-depth baseline")):
        p = sub.add_parser(name, help=text)
        _add_config(p)
        p.add_argument("--planner", help="trained planner JSON (overrides simulation.planner)")
        p.add_argument("--model", help="plant model JSON (overrides simulation.model)")
        p.add_argument("--seed", type=int, help="environment seed")
        p.add_argument("--duration", type=float)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--no-plots", action="store_true")
    return parser


def _config(args):
    from .config import load_config

    cfg = load_config(args.config)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg = cfg.override(key, value)
    for flag, key in (("seed", None), ("episodes", "planner.episodes"), ("duration", "simulation.duration")):
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "seed":
            key = "planner.seed" if args.command == "train-planner" else "environment.seed"
        cfg = cfg.override(key, value)
    return cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_synth_env(args):
    from .ocean import synthesize_shear_profile

    synthesize_shear_profile(args.kind, duration=args.duration, seed=args.seed).to_csv(args.out)


def cmd_gp_fit(args):
    from .ocean import GPHyperparameters, fit_hyperparameters, gp_fit, load_adcp_csv, save_gp

    field, report = load_adcp_csv(args.data)
    if report.dropped_rows or report.n_filled:
        log.warning("dropped %d rows, filled %d cells", len(report.dropped_rows), report.n_filled)
    obs = field.observations()
    if len(obs) > args.max_points:
        idx = np.linspace(0, len(obs) - 1, args.max_points).round().astype(int)
        obs = obs[idx]
    hyper = GPHyperparameters()
    if args.optimize:
        hyper, ll = fit_hyperparameters(
            obs,
            signal_vars=[0.05**2, 0.1**2, 0.3**2],
            length_zs=[5.0, 15.0, 40.0],
            length_ts=[3600.0, 10800.0, 43200.0],
            noise_vars=[0.01**2, 0.05**2],
        )
        log.info("selected %s (log marginal likelihood %.3f)", hyper, ll)
    save_gp(gp_fit(obs, hyper), args.out)


def cmd_export_model(args):
    from .plant import build_reference_model, save_model

    save_model(build_reference_model(_config(args).plant), args.out)


def cmd_train_planner(args):
    from .closed_loop import training_sampler
    from .planner import train

    cfg = _config(args)
    planner, history = train(training_sampler(cfg.environment), cfg.planner, cfg.power)
    planner.save(args.out)
    if args.log:
        _write_csv(args.log, ["episode", "return", "loss", "epsilon"],
                   [(i, r, l, e) for i, (r, l, e) in
                    enumerate(zip(history.returns, history.losses, history.epsilons))])


def cmd_plan(args):
    from .closed_loop import build_environment
    from .ocean import read_field_csv
    from .planner import Planner, plan_path

    cfg = _config(args)
    planner = Planner.load(args.planner)
    if args.field:
        forecast = read_field_csv(args.field)
    else:
        _, forecast = build_environment(cfg.environment)
    wps = plan_path(planner, forecast, args.z0, args.horizon)
    T_p = planner.power.T_p
    _write_csv(args.out, ["time_s", "depth_m"],
               [(repr((k + 1) * T_p), repr(float(z))) for k, z in enumerate(wps)])


def _read_reference(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["time_s", "depth_m"]:
        raise ValueError(f"{path}: expected header time_s,depth_m")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: no reference samples")
    if not np.all(np.isfinite(data)) or np.any(np.diff(data[:, 0]) <= 0):
        raise ValueError(f"{path}: times must be finite and strictly increasing")
    return data[:, 0], data[:, 1]


def cmd_track(args):
    from .closed_loop import build_tracker
    from .plant import PHI, PSI, THETA, Z, step

    cfg = _config(args)
    sim = cfg.simulation_config(model_path=args.model)
    model, tracker = build_tracker(sim)
    t_ref, z_ref = _read_reference(args.ref)
    t = np.arange(t_ref[0], t_ref[-1] + 0.5 * sim.T_s, sim.T_s)
    # zero-order hold on the given samples
    r = z_ref[np.searchsorted(t_ref, t, side="right") - 1] - sim.z_eq
    x = np.zeros(model.n_states)
    u_prev = np.zeros(model.n_inputs)
    rows = []
    for k, tk in enumerate(t):
        sol = tracker.step(x, u_prev, r[k + 1 : k + 1 + tracker.N_t] if k + 1 < r.size else r[-1:])
        u = sol.u
        deg = np.degrees(x[[PHI, THETA, PSI]])
        rows.append([repr(float(v)) for v in (tk, sim.z_eq + x[Z], sim.z_eq + r[k], *u, *deg,
                                                sol.kkt_residual)] + [sol.iterations])
        x = step(model, x, u)
        u_prev = u
    _write_csv(args.out, ["time_s", "z_m", "z_ref_m", "Bf", "Ba", "tau_em",
                          "phi_deg", "theta_deg", "psi_deg", "kkt_residual", "iters"], rows)


def _simulation(args):
    cfg = _config(args)
    sim = cfg.simulation_config(planner_path=args.planner, model_path=args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return sim, out


def cmd_simulate(args):
    from .closed_loop import plot_log, run_episode, write_metrics

    sim, out = _simulation(args)
    log_, metrics = run_episode(sim)
    log_.to_csv(out / "log.csv")
    write_metrics(metrics, out / "metrics.json")
    if not args.no_plots:
        plot_log(log_, out)


def cmd_compare_baseline(args):
    from .closed_loop import build_environment, compare, plot_log, run_baseline, run_episode

    sim, out = _simulation(args)
    fields = build_environment(sim.environment)
    log_p, m_p = run_episode(sim, fields=fields)
    log_b, m_b = run_baseline(sim, fields=fields)
    report = compare(m_p, m_b)
    log_p.to_csv(out / "planned.csv")
    log_b.to_csv(out / "baseline.csv")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    if not args.no_plots:
        plot_log(log_p, out, baseline=log_b)


COMMANDS = {
    "synth-env": cmd_synth_env,
    "gp-fit": cmd_gp_fit,
    "export-model": cmd_export_model,
    "train-planner": cmd_train_planner,
    "plan": cmd_plan,
    "track": cmd_track,
    "simulate": cmd_simulate,
    "compare-baseline": cmd_compare_baseline,
}


def main(argv=None):
    from .config import ConfigError

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mctpath {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"mctpath {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report any stage failure as exit 2
        print(f"mctpath {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands wire the shared operations layer to files: every run reads one
TOML config, writes its artifacts under --out-dir (default: the
HACPASS_OUT_DIR environment variable, then the working directory), and
emits exactly one manifest.json there.

Exit codes: 0 success/feasible, 1 infeasible or violated, 2 usage or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, ops
from .config import ConfigError, parse_config_text
from .netsim import DivergenceError, EventGridError, SteadyStateError
from .smallsignal import ConvergenceError, FrequencyResponseError

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (
    ConvergenceError,
    FrequencyResponseError,
    SteadyStateError,
    DivergenceError,
    np.linalg.LinAlgError,
)


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _out_dir(args) -> Path:
    raw = args.out_dir or os.environ.get("HACPASS_OUT_DIR") or "."
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args):
    text = Path(args.config).read_text()
    return parse_config_text(text), text


def _emit_manifest(command, cfg, text, parameters, outputs, results, out_dir) -> None:
    manifest = ops.build_manifest(command, cfg, text, parameters, [str(p) for p in outputs], results)
    ops.write_manifest(manifest, out_dir)


def cmd_certify(args) -> int:
    cfg, text = _load(args)
    out_dir = _out_dir(args)
    outcome = ops.certify_network(
        cfg, synthesize=args.synthesize, eta=args.eta, gamma=args.gamma
    )
    for e in outcome.entries:
        tag = "synthesized" if e.synthesized else "stored witness"
        if e.feasible:
            print(
                f"bus {e.bus}: feasible ({tag}; margins "
                f"{e.margins[0]:.4e}, {e.margins[1]:.4e}, {e.margins[2]:.4e}; "
                f"min-eig {e.q_min_eig:.4e})"
            )
        elif e.infeasibility is not None:
            print(f"bus {e.bus}: infeasible ({tag}; blocked at {e.infeasibility})")
        else:
            print(f"bus {e.bus}: infeasible ({tag}; margins {e.margins})")
    report_path = ops.write_json_report(outcome, out_dir, "certify_report.json")
    _emit_manifest(
        "certify", cfg, text,
        {"synthesize": args.synthesize, "eta": args.eta, "gamma": args.gamma},
        [report_path], {"all_feasible": outcome.all_feasible}, out_dir,
    )
    return EXIT_OK if outcome.all_feasible else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    cfg, text = _load(args)
    out_dir = _out_dir(args)
    if args.n_points < 1:
        raise ConfigError("need at least one grid point")
    if not 0.0 < args.omega_min <= args.omega_max:
        raise ConfigError("need 0 < omega-min <= omega-max")
    if args.n_points == 1:
        grid = np.array([args.omega_min])
    else:
        grid = np.logspace(
            np.log10(args.omega_min), np.log10(args.omega_max), args.n_points
        )
    outcome = ops.sweep_inverter(
        cfg, args.bus, grid,
        i_load_dq=(args.i_load_d, args.i_load_q),
        i_dc_ref=args.i_dc_ref,
    )
    if outcome.gaps:
        _warn(f"{len(outcome.gaps)} grid points failed and are nan in the CSV")
    csv_path = out_dir / f"sweep_bus{args.bus}.csv"
    ops.export_sweep_csv(outcome, csv_path)
    finite = np.isfinite(outcome.ifp) & np.isfinite(outcome.ofp)
    if finite.any():
        print(
            f"bus {args.bus}: {outcome.omega.size} points, "
            f"min ifp {np.min(outcome.ifp[finite]):.6g}, "
            f"min ofp {np.min(outcome.ofp[finite]):.6g}"
            + ("" if outcome.all_positive else " (not all positive)")
        )
    else:
        print(f"bus {args.bus}: all {outcome.omega.size} points failed")
    _emit_manifest(
        "sweep", cfg, text,
        {
            "bus": args.bus, "n_points": args.n_points,
            "omega_min": args.omega_min, "omega_max": args.omega_max,
            "i_load_d": args.i_load_d, "i_load_q": args.i_load_q,
            "i_dc_ref": args.i_dc_ref,
        },
        [csv_path], {"all_positive": outcome.all_positive, "gaps": len(outcome.gaps)},
        out_dir,
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, text = _load(args)
    out_dir = _out_dir(args)
    try:
        outcome = ops.simulate_network(cfg, out_dir, t_end=args.t_end, dt=args.dt)
    except DivergenceError as exc:
        dump = out_dir / "divergence_state.txt"
        np.savetxt(dump, exc.state[None, :], fmt="%.12g", delimiter=",")
        _err(f"{exc} (last finite state written to {dump})")
        return EXIT_NUMERICAL
    for ev in outcome.skipped_events:
        _warn(f"event at t={ev['time']} s skipped (beyond t_end={outcome.t_end} s)")
    for bus, (p, q) in sorted(outcome.pre_event_load_powers.items()):
        print(f"bus {bus} pre-event load: {p / 1e6:.3f} MW, {q / 1e6:.3f} MVAr")
    print(
        f"settling metric: peak {outcome.peak_metric:.6g}, final {outcome.final_metric:.6g}, "
        f"settled={outcome.settled}"
    )
    outputs = [outcome.csv_path] if outcome.csv_path else []
    _emit_manifest(
        "simulate", cfg, text,
        {"t_end": outcome.t_end, "dt": outcome.dt},
        outputs,
        {
            "settled": outcome.settled,
            "peak_metric": outcome.peak_metric,
            "final_metric": outcome.final_metric,
            "applied_events": list(outcome.applied_events),
            "pre_event_load_powers": {
                str(b): list(pq) for b, pq in outcome.pre_event_load_powers.items()
            },
        },
        out_dir,
    )
    return EXIT_OK if outcome.settled else EXIT_INFEASIBLE


def cmd_verify(args) -> int:
    cfg, text = _load(args)
    out_dir = _out_dir(args)
    if args.seeds <= 0:
        raise ConfigError("need at least one seed")
    seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    outcome, pairs = ops.verify_inverter(
        cfg, args.bus, seeds, lam=args.lam, t_end=args.t_end, dt=args.dt
    )
    inv = next(i for i in cfg.inverters if i.bus == args.bus)
    csv_path = out_dir / f"verify_bus{args.bus}.csv"
    ops.export_verify_csv(outcome, pairs, inv, csv_path)
    worst = min(e.slack / e.tol for e in outcome.entries)
    for e in outcome.entries:
        status = "ok" if e.satisfied else "VIOLATED"
        print(
            f"seed {e.seed}: slack {e.slack:.6g} J (tol {e.tol:.3g}), "
            f"rho {e.largest_rho:.6g}, {status}"
        )
    print(
        f"bus {args.bus}: {len(outcome.entries)} seeds, worst slack/tol {worst:.3g}, "
        f"all_satisfied={outcome.all_satisfied}"
    )
    report_path = ops.write_json_report(outcome, out_dir, "verify_report.json")
    _emit_manifest(
        "verify", cfg, text,
        {
            "bus": args.bus, "seeds": args.seeds, "seed_start": args.seed_start,
            "lam": args.lam, "t_end": args.t_end, "dt": args.dt,
        },
        [csv_path, report_path], {"all_satisfied": outcome.all_satisfied}, out_dir,
    )
    return EXIT_OK if outcome.all_satisfied else EXIT_INFEASIBLE


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hacpass",
        description="Passivity certification and simulation for HAC grid-forming inverters.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML network description")
        p.add_argument(
            "--out-dir", default=None,
            help="artifact directory (default: $HACPASS_OUT_DIR, then cwd)",
        )

    p = sub.add_parser("certify", help="check or synthesize per-inverter certificates")
    common(p)
    p.add_argument("--synthesize", action="store_true", help="ignore stored witnesses")
    p.add_argument("--eta", type=float, default=None, help="override the DC-angle gain")
    p.add_argument("--gamma", type=float, default=None, help="override the angle damping gain")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("sweep", help="passivity indices over a frequency grid")
    common(p)
    p.add_argument("--bus", type=int, required=True, help="inverter bus id")
    p.add_argument("--n-points", type=int, default=400)
    p.add_argument("--omega-min", type=float, default=1e-1, help="rad/s")
    p.add_argument("--omega-max", type=float, default=1e4, help="rad/s")
    p.add_argument("--i-load-d", type=float, default=0.0, help="local load current, d axis [A]")
    p.add_argument("--i-load-q", type=float, default=0.0, help="local load current, q axis [A]")
    p.add_argument(
        "--i-dc-ref", type=float, default=None,
        help="override the DC current reference (moves the equilibrium off the setpoint)",
    )
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="run the configured network scenario")
    common(p)
    p.add_argument("--t-end", type=float, default=None, help="override horizon [s]")
    p.add_argument("--dt", type=float, default=None, help="override step [s]")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="trajectory dissipation checks for one inverter")
    common(p)
    p.add_argument("--bus", type=int, required=True, help="inverter bus id")
    p.add_argument("--seeds", type=int, default=20, help="number of seeded pairs")
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--lam", type=float, default=None, help="override the storage angle weight")
    p.add_argument("--t-end", type=float, default=0.3, help="pair horizon [s]")
    p.add_argument("--dt", type=float, default=2e-5, help="pair step [s]")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _err(f"cannot read {exc.filename}")
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        # before ValueError: LinAlgError subclasses it
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (ConfigError, EventGridError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()

"""Command-line front end.

Subcommands: simulate, sweep-gamma, synthesize, gen-track, export-lifted.
Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 simulation
divergence.  Every run prints its resolved configuration before executing.
Output files are deterministic for fixed flags and seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np
import yaml

from . import harness, ilc, lifted, track
from .harness import ConfigError, LapDivergenceError
from .track import TrackFormatError

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parse_range(text: str) -> np.ndarray:
    """Parse start:stop:count into evenly spaced values."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:stop:count, got {text!r}")
    try:
        start, stop = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad range {text!r}: {exc}") from exc
    if count < 1:
        raise argparse.ArgumentTypeError("range count must be at least 1")
    return np.linspace(start, stop, count)


def _parse_filter(text: str):
    if text == "off":
        return None
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad filter {text!r}") from exc
    if value <= 0.0:
        raise argparse.ArgumentTypeError("filter cutoff must be positive or 'off'")
    return value


def _print_resolved(mapping: dict) -> None:
    print("resolved config:")
    print(yaml.safe_dump(mapping, default_flow_style=False, sort_keys=True), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raceilc",
        description="Iterative learning control experiments for lap tracking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a multi-lap learning experiment")
    p_sim.add_argument("--config", required=True, help="experiment config (YAML)")
    p_sim.add_argument("--out", required=True, help="result file to write")
    p_sim.add_argument("--format", choices=("csv", "json"), default="csv")
    p_sim.add_argument("--seed", type=int, default=None, help="override noise seed")

    p_sweep = sub.add_parser("sweep-gamma", help="convergence factor over a gain grid")
    p_sweep.add_argument("--kp-range", required=True, type=_parse_range, metavar="A:B:N")
    p_sweep.add_argument("--kd-range", required=True, type=_parse_range, metavar="A:B:N")
    p_sweep.add_argument("--filter-hz", type=_parse_filter, default=None, metavar="F|off")
    p_sweep.add_argument("--speed", type=float, default=20.0, help="constant speed (m/s)")
    p_sweep.add_argument("--ts", type=float, default=0.1, help="learning sample time (s)")
    p_sweep.add_argument("--n-window", type=int, default=400, help="window length")
    p_sweep.add_argument("--track", default=None, help="track CSV for a varying-speed sweep")
    p_sweep.add_argument("--accel", type=float, default=None, help="accel level for --track mode")
    p_sweep.add_argument("--out", required=True)

    p_syn = sub.add_parser("synthesize", help="build and export a learning operator")
    p_syn.add_argument("--config", required=True)
    p_syn.add_argument("--out-q", required=True, help="filter matrix dump")
    p_syn.add_argument("--out-l", required=True, help="learning matrix dump")
    p_syn.add_argument("--n-window", type=int, default=None, help="truncate to this length")
    p_syn.add_argument("--print-gamma", action="store_true")

    p_gen = sub.add_parser("gen-track", help="write the bundled synthetic track")
    p_gen.add_argument("--out", required=True)

    p_exp = sub.add_parser("export-lifted", help="export the lifted matrices")
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--out", required=True, help="P matrix dump")
    p_exp.add_argument("--out-d", default=None, help="disturbance vector dump")
    p_exp.add_argument("--n-window", type=int, default=None)
    return parser


def _load_config(path, seed_override=None) -> harness.ExperimentConfig:
    try:
        config = harness.load_config(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    if seed_override is not None:
        config = dataclasses.replace(config, noise_seed=seed_override)
    return config


def _windowed_setup(config, n_window):
    setup = harness.build_setup(config)
    if n_window is None or n_window >= setup.grid.n:
        return setup
    grid = track.TimeGrid(
        sample_time=setup.grid.sample_time,
        n=n_window,
        times=setup.grid.times[:n_window],
        distances=setup.grid.distances[:n_window],
        speeds=setup.grid.speeds[:n_window],
    )
    ltv = lifted.build_ltv(grid, setup.track, setup.params)
    system = lifted.build_lifted_from_ltv(ltv, grid)
    if isinstance(config.learner, harness.PdLearner):
        operator = ilc.pd_operator(
            config.learner.k_p,
            config.learner.k_d,
            grid.n,
            config.learner.cutoff_hz,
            grid.sample_time,
        )
    else:
        operator = ilc.qilc_operator(
            system, ilc.Weights(config.learner.t, config.learner.r, config.learner.s)
        )
    return harness.ExperimentSetup(
        setup.track, setup.speed, grid, ltv, system, operator, setup.params
    )


def cmd_simulate(args) -> int:
    config = _load_config(args.config, args.seed)
    _print_resolved(harness.config_to_dict(config))
    result = harness.run_experiment(config)
    harness.export_result(result, args.out, args.format)
    print("lap  rms_m         peak_m")
    for record in result.laps:
        print(f"{record.iteration:3d}  {record.rms_error:.6e}  {record.peak_error:.6e}")
    if result.gamma is not None:
        print(f"gamma: {result.gamma:.6f}")
    print(f"wrote {args.out} ({args.format}) in {result.wall_time_s:.2f} s")
    return EXIT_OK


def cmd_sweep_gamma(args) -> int:
    resolved = {
        "kp_range": [float(v) for v in args.kp_range],
        "kd_range": [float(v) for v in args.kd_range],
        "filter_hz": args.filter_hz,
        "ts": args.ts,
        "n_window": args.n_window,
        "out": args.out,
    }
    if args.track is not None:
        if args.accel is None:
            raise ConfigError("--track mode needs --accel")
        resolved.update({"track": args.track, "accel": args.accel})
        _print_resolved(resolved)
        config = harness.ExperimentConfig(track=args.track, accel=args.accel,
                                          sample_time=args.ts)
        setup = _windowed_setup(config, args.n_window)
        system = setup.system
    else:
        resolved["speed"] = args.speed
        _print_resolved(resolved)
        from .vehicle import default_params

        system = lifted.constant_speed_system(
            args.speed, args.n_window, args.ts, default_params()
        )
    cells = harness.gamma_sweep(
        args.kp_range, args.kd_range, filter_hz=args.filter_hz, system=system
    )
    harness.write_sweep_csv(args.out, cells)
    stable = sum(cell.stable for cell in cells)
    print(f"{len(cells)} cells, {stable} with gamma < 1; wrote {args.out}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    config = _load_config(args.config)
    _print_resolved(harness.config_to_dict(config))
    setup = _windowed_setup(config, args.n_window)
    n, ts = setup.grid.n, setup.grid.sample_time
    lifted.export_matrix_csv(args.out_q, setup.operator.q, n, ts)
    lifted.export_matrix_csv(args.out_l, setup.operator.l, n, ts)
    print(f"wrote Q to {args.out_q} and L to {args.out_l} (n={n})")
    if args.print_gamma:
        gamma = lifted.convergence_factor(setup.system.p, setup.operator.q, setup.operator.l)
        print(f"gamma: {gamma:.6f}")
    return EXIT_OK


def cmd_gen_track(args) -> int:
    _print_resolved({"out": args.out})
    text = track.track_csv_text(track.synthetic_track())
    with open(args.out, "w", newline="") as f:
        f.write(text)
    profile, _ = track.load_track(args.out)
    print(f"wrote {args.out}: {profile.stations.size} stations, "
          f"lap length {profile.lap_length:.3f} m")
    return EXIT_OK


def cmd_export_lifted(args) -> int:
    config = _load_config(args.config)
    _print_resolved(harness.config_to_dict(config))
    setup = _windowed_setup(config, args.n_window)
    n, ts = setup.grid.n, setup.grid.sample_time
    lifted.export_matrix_csv(args.out, setup.system.p, n, ts)
    if args.out_d is not None:
        lifted.export_matrix_csv(args.out_d, setup.system.d, n, ts)
    print(f"wrote P ({n}x{n}) to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "sweep-gamma": cmd_sweep_gamma,
    "synthesize": cmd_synthesize,
    "gen-track": cmd_gen_track,
    "export-lifted": cmd_export_lifted,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except LapDivergenceError as exc:
        print(f"error: simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, TrackFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        # inputs named by the config count as configuration problems
        print(f"error: missing input file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point for the experiment pipeline.

Commands
    train             learn a control potential from a run config
    stabilize         run the mode-stabilizing feedback from a checkpoint
    sweep             grid of independent training runs over one parameter
    export-potential  sample the potential surfaces on a configuration grid

The environment variable MODECTL_SEED, when set, overrides the config seed.
All numeric results are written as CSV/JSON files; plotting is left to
external tools.
"""

import argparse
import json
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np

from .checkpoint import load_checkpoint
from .config import ConfigError, config_to_dict, load_config
from .dynamics import State
from .integrator import TimeGrid, rollout
from .objectives import certify_eigenmode, potential_surface
from .stabilizer import (
    cycle_multipliers,
    find_orbit_point,
    reference_mode_from_trajectory,
    simulate_closed_loop,
)
from .training import DivergedTrainingError, sweep, train

POTENTIAL_HEADER = "q1,q2,V_theta,V_gravity,V_spring,V_total"


def _build_id():
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True,
            text=True,
            timeout=5,
        )
        if rev.returncode == 0:
            return f"modectl-0.1.0+g{rev.stdout.strip()}"
    except OSError:
        pass
    return "modectl-0.1.0"


def _write_manifest(output_dir, command, config_snapshot, timings):
    files = []
    for root, _, names in os.walk(output_dir):
        for name in names:
            rel = os.path.relpath(os.path.join(root, name), output_dir)
            if rel != "manifest.json":
                files.append(rel)
    files.append("manifest.json")
    manifest = {
        "command": command,
        "build": _build_id(),
        "config": config_snapshot,
        "files": sorted(files),
        "timings": timings,
    }
    with open(os.path.join(output_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _write_potential_csv(path, rows):
    with open(path, "w") as fh:
        fh.write(POTENTIAL_HEADER + "\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def _load_run_config(path):
    cfg = load_config(path)
    env_seed = os.environ.get("MODECTL_SEED")
    if env_seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=int(env_seed)))
    return cfg


def _parse_vector(text, name):
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {name}={text!r}") from exc
    if len(parts) != 2:
        raise ConfigError(f"{name} must have two components, got {text!r}")
    return np.array(parts)


def _parse_sweep_values(text, parameter):
    tokens = [tok for tok in text.split(",") if tok.strip() != ""]
    if not tokens:
        raise ConfigError("empty sweep value list")
    values = []
    for tok in tokens:
        if parameter in ("q0", "h_star"):
            comps = tok.split(":")
            if len(comps) != 2:
                raise ConfigError(
                    f"{parameter} sweep values must be 'a:b' pairs, got {tok!r}"
                )
            values.append(np.array([float(c) for c in comps]))
        elif parameter == "seed":
            values.append(int(tok))
        else:
            values.append(float(tok))
    return values


def cmd_train(args):
    try:
        cfg = _load_run_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = args.output_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)

    t0 = time.perf_counter()
    tol = cfg.tolerances
    try:
        result = train(
            cfg.pendulum,
            cfg.train,
            output_dir=out,
            tol_p=tol.tol_p,
            tol_q=tol.tol_q,
            tol_line=tol.tol_line,
        )
    except DivergedTrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    train_s = time.perf_counter() - t0

    result.trajectory.to_csv(os.path.join(out, "trajectory.csv"))
    with open(os.path.join(out, "certification.json"), "w") as fh:
        json.dump(result.certification.to_dict(), fh, indent=2)
    _write_potential_csv(
        os.path.join(out, "potential.csv"),
        potential_surface(cfg.pendulum, result.net, args.potential_grid),
    )
    _write_manifest(
        out,
        "train",
        config_to_dict(cfg),
        {"train_s": train_s, "total_s": time.perf_counter() - t0},
    )
    print(
        f"trained {cfg.train.epochs} epochs, period {result.period:.6g} s, "
        f"eigenmode={result.certification.is_eigenmode}"
    )
    return 0


def cmd_stabilize(args):
    try:
        cfg = _load_run_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except Exception as exc:
        print(f"cannot load checkpoint {args.checkpoint}: {exc}", file=sys.stderr)
        return 1
    out = args.output_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)

    t0 = time.perf_counter()
    grid = TimeGrid(period=ckpt.period, steps=cfg.stabilize.reference_samples)
    reference = rollout(ckpt.pendulum, ckpt.net, ckpt.q0, grid)
    tol = cfg.tolerances
    cert = certify_eigenmode(
        reference, tol_p=tol.tol_p, tol_q=tol.tol_q, tol_line=tol.tol_line
    )
    if not cert.is_eigenmode:
        print(
            "checkpoint trajectory failed eigenmode certification: "
            f"{cert.to_dict()}",
            file=sys.stderr,
        )
        return 3
    mode = reference_mode_from_trajectory(reference)

    gains = cfg.gains
    if args.damping is not None:
        gains = replace(gains, b=args.damping)
    state0 = State(q=_parse_vector(args.q0, "--q0"), p=_parse_vector(args.p0, "--p0"))

    sim = simulate_closed_loop(
        ckpt.pendulum,
        ckpt.net,
        mode,
        state0,
        gains,
        periods=args.periods,
        steps_per_period=cfg.stabilize.steps_per_period,
    )
    sim.to_csv(os.path.join(out, "metrics.csv"))

    x0 = find_orbit_point(
        ckpt.pendulum,
        ckpt.net,
        mode,
        gains,
        state0,
        steps_per_period=cfg.stabilize.steps_per_period,
    )
    multipliers = cycle_multipliers(
        ckpt.pendulum,
        ckpt.net,
        mode,
        gains,
        x0,
        steps_per_period=cfg.stabilize.steps_per_period,
    )
    with open(os.path.join(out, "multipliers.json"), "w") as fh:
        json.dump([m.to_dict() for m in multipliers], fh, indent=2)

    _write_manifest(
        out,
        "stabilize",
        config_to_dict(cfg),
        {"total_s": time.perf_counter() - t0},
    )
    defined = [m.ratio for m in multipliers if m.defined]
    bound = max(abs(r) for r in defined) if defined else float("nan")
    print(
        f"simulated {args.periods} periods with damping b={gains.b}; "
        f"max |multiplier| = {bound:.4g}"
    )
    return 0


def cmd_sweep(args):
    try:
        cfg = _load_run_config(args.config)
        values = _parse_sweep_values(args.values, args.param)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = args.output_dir or cfg.output_dir
    t0 = time.perf_counter()
    try:
        entries = sweep(
            cfg.pendulum, cfg.train, args.param, values, out, jobs=args.jobs
        )
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    manifest_extra = {"runs": entries}
    manifest = _write_manifest(
        out,
        "sweep",
        {**config_to_dict(cfg), "sweep": manifest_extra},
        {"total_s": time.perf_counter() - t0},
    )
    ok = sum(1 for e in entries if e["status"] == "ok")
    print(f"sweep over {args.param}: {ok}/{len(entries)} runs succeeded "
          f"({len(manifest['files'])} files)")
    return 0


def cmd_export_potential(args):
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except Exception as exc:
        print(f"cannot load checkpoint {args.checkpoint}: {exc}", file=sys.stderr)
        return 1
    rows = potential_surface(ckpt.pendulum, ckpt.net, args.grid)
    _write_potential_csv(args.output, rows)
    print(f"wrote {rows.shape[0]} grid rows to {args.output}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="modectl",
        description="Learn, stabilize and export oscillation modes of the "
        "elastic double pendulum.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the control potential")
    p_train.add_argument("config", help="YAML run configuration")
    p_train.add_argument("--output-dir", default=None)
    p_train.add_argument(
        "--potential-grid", type=int, default=50,
        help="resolution of the exported potential surface",
    )
    p_train.set_defaults(func=cmd_train)

    p_stab = sub.add_parser("stabilize", help="stabilize a trained mode")
    p_stab.add_argument("config")
    p_stab.add_argument("checkpoint")
    p_stab.add_argument("--q0", default="0.2,0.2", help="initial angles 'a,b'")
    p_stab.add_argument("--p0", default="5,5", help="initial momenta 'c,d'")
    p_stab.add_argument("--damping", type=float, default=None)
    p_stab.add_argument("--periods", type=int, default=3)
    p_stab.add_argument("--output-dir", default=None)
    p_stab.set_defaults(func=cmd_stabilize)

    p_sweep = sub.add_parser("sweep", help="train over a parameter grid")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True,
                         choices=("alpha_eff", "T", "q0", "h_star", "seed"))
    p_sweep.add_argument(
        "--values", required=True,
        help="comma-separated values; 'a:b' pairs for q0/h_star",
    )
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--output-dir", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_exp = sub.add_parser("export-potential", help="sample potential surfaces")
    p_exp.add_argument("checkpoint")
    p_exp.add_argument("--grid", type=int, default=50)
    p_exp.add_argument("--output", default="potential.csv")
    p_exp.set_defaults(func=cmd_export_potential)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

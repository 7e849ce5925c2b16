"""Command-line driver: simulate, solve, check-derivatives, export, scene.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration
error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import optimize as OPT
from . import scenario as SC
from . import verify as V
from .errors import ConfigError, SoftlocoError


def _load(args):
    if args.config:
        config = SC.load_config_file(args.config)
    elif getattr(args, "scene", None):
        config = SC.builtin_config(args.scene)
    else:
        raise ConfigError("need --config PATH or --scene NAME")
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "frames", None) is not None:
        config["frames"] = args.frames
    if getattr(args, "workers", None) is not None:
        config.setdefault("optimizer", {})["workers"] = args.workers
    if getattr(args, "h", None) is not None:
        config.setdefault("optimizer", {})["h"] = args.h
    return SC.load_scenario(config)


def _ensure_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_solve(args):
    sn = _load(args)
    out = _ensure_out(args)
    traj = OPT.rollout(sn.scene, sn.initial_state, sn.frame_specs(),
                       sn.step_cfg, sn.opt_cfg)
    SC.write_positions(os.path.join(out, "positions.csv"), traj.positions)
    SC.write_activations(os.path.join(out, "activations.csv"), traj.activations)
    SC.write_convergence(os.path.join(out, "convergence.csv"), traj.reports)
    SC.write_report_summary(os.path.join(out, "report.csv"), traj.reports,
                            traj.min_distance)
    if not traj.completed:
        print(f"solve failed after {len(traj.positions)} frames: {traj.error}",
              file=sys.stderr)
        return 1
    print(f"solved {len(traj.positions)} frames; "
          f"min contact distance {traj.min_distance:.3e}; outputs in {out}")
    return 0


def cmd_simulate(args):
    sn = _load(args)
    out = _ensure_out(args)
    acts = SC.read_activations(args.activations)
    if sn.scene.num_activations and acts.shape[1] != sn.scene.num_activations:
        raise ConfigError(
            f"activation file has {acts.shape[1]} columns, scene needs "
            f"{sn.scene.num_activations}")
    frames = args.frames if args.frames is not None else len(acts)
    traj = OPT.simulate(sn.scene, sn.initial_state, list(acts[:frames]),
                        sn.step_cfg)
    SC.write_positions(os.path.join(out, "positions.csv"), traj.positions)
    if not traj.completed:
        print(f"simulate failed after {len(traj.positions)} frames: "
              f"{traj.error}", file=sys.stderr)
        return 1
    print(f"simulated {len(traj.positions)} frames; outputs in {out}")
    return 0


def cmd_check_derivatives(args):
    sn = _load(args)
    report = V.check_derivatives(sn, at_frame=args.at, mode=args.mode,
                                 h=args.h if args.h else 1e-20)
    print(V.format_report(report))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "derivative_check.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    return 0 if report["ok"] else 1


def cmd_export(args):
    sn = _load(args)
    out = _ensure_out(args)
    positions = SC.read_positions(args.positions)
    if positions.shape[1] != sn.scene.mesh.num_vertices:
        raise ConfigError(
            f"trajectory has {positions.shape[1]} vertices, mesh has "
            f"{sn.scene.mesh.num_vertices}")
    if args.format != "obj-sequence":
        raise ConfigError(f"unknown export format {args.format!r}")
    paths = SC.export_obj_sequence(out, sn.scene.mesh, positions)
    print(f"wrote {len(paths)} OBJ files to {out}")
    return 0


def cmd_scene(args):
    if args.action == "list":
        for name in SC.builtin_names():
            print(name)
        return 0
    config = SC.builtin_config(args.name)
    text = json.dumps(config, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _add_common(p, scene=True):
    p.add_argument("--config", help="scenario config JSON")
    if scene:
        p.add_argument("--scene", help="builtin scene name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--h", type=float, default=None,
                   help="imaginary perturbation step")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="softloco",
        description="Muscle-driven soft-body locomotion control")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve per-frame activations")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("simulate", help="forward-only rollout")
    _add_common(p)
    p.add_argument("--activations", required=True,
                   help="activation schedule CSV (as written by solve)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("check-derivatives",
                       help="verify gradients/Hessians against oracles")
    _add_common(p)
    p.add_argument("--at", type=int, default=0, help="frame to check at")
    p.add_argument("--mode", choices=["fd", "bicomplex", "both"],
                   default="both")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_check_derivatives)

    p = sub.add_parser("export", help="export a trajectory as OBJ files")
    _add_common(p)
    p.add_argument("--positions", required=True, help="positions.csv path")
    p.add_argument("--format", default="obj-sequence")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("scene", help="list or dump builtin scenes")
    p.add_argument("action", choices=["list", "dump"])
    p.add_argument("name", nargs="?")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_scene)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "scene" and args.action == "dump" and not args.name:
        parser.error("scene dump needs a name")
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"missing file: {err}", file=sys.stderr)
        return 2
    except SoftlocoError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

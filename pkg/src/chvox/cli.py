"""Command line interface: ``chvox run|convergence|validate-mask|info``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from chvox.config import ConfigError, load_config
from chvox.grid import GridError, build_grid, connected_components, read_mask
from chvox.newton import KrylovError, NewtonError
from chvox.operators import VelocityError
from chvox.stepper import FrozenStateError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def _cmd_run(args) -> int:
    from chvox import scenarios

    cfg = load_config(args.config)
    if args.output_dir:
        cfg = cfg.replace(output_dir=args.output_dir)
    if cfg.scenario == "convergence":
        return _cmd_convergence(args)
    result = scenarios.RUNNERS[cfg.scenario](cfg)
    last = result.records[-1] if result.records else result.initial
    print(f"steps: {len(result.records)}  t = {last.time:.6g}  mass = {last.mass:.17g}")
    print(f"energy: total = {last.total_energy:.10g}  stationary = {last.stationary_flag}")
    for key, val in result.extra.items():
        if key in ("diagonal", "front"):
            continue
        print(f"{key}: {val}")
    if "front" in result.extra and result.extra["front"]:
        print(f"front position: {result.extra['front'][-1]:.6g}")
    return EXIT_OK


def _cmd_convergence(args) -> int:
    from chvox.scenarios import format_convergence, run_convergence

    cfg = load_config(args.config)
    header_printed = []

    def show(row):
        if not header_printed:
            print(format_convergence([]).splitlines()[0])
            header_printed.append(True)
        print(format_convergence([row]).splitlines()[1], flush=True)

    rows = run_convergence(cfg, on_row=show)
    out = Path(args.output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "convergence.txt").write_text(format_convergence(rows) + "\n")
    return EXIT_OK


def _cmd_validate_mask(args) -> int:
    mask = read_mask(args.mask, args.N)
    grid = build_grid(mask, args.exterior)
    labels = connected_components(grid)
    N = mask.shape[0]
    print(f"N = {N}  elements = {grid.n_elements}  porosity = {grid.n_elements / N**3:.6f}")
    print(f"interior faces = {grid.n_interior_faces}  boundary faces = {grid.n_boundary_faces}")
    print(f"components = {int(labels.max()) + 1}  largest = {int(np.bincount(labels).max())}")
    return EXIT_OK


def _cmd_info(args) -> int:
    from chvox.scenarios import describe

    cfg = load_config(args.config)
    for key, val in describe(cfg).items():
        print(f"{key} = {val}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chvox", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the scenario of a config file")
    r.add_argument("config")
    r.add_argument("-o", "--output-dir")
    r.set_defaults(func=_cmd_run)
    c = sub.add_parser("convergence", help="manufactured-solution refinement study")
    c.add_argument("config")
    c.add_argument("-o", "--output-dir")
    c.set_defaults(func=_cmd_convergence)
    m = sub.add_parser("validate-mask", help="check a voxel mask and report its topology")
    m.add_argument("mask")
    m.add_argument("--N", type=int, help="edge length for raw binary masks")
    m.add_argument("--exterior", default=None, help="exterior cube sides, e.g. x-,x+")
    m.set_defaults(func=_cmd_validate_mask)
    i = sub.add_parser("info", help="print derived quantities of a config")
    i.add_argument("config")
    i.set_defaults(func=_cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GridError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, VelocityError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonError, KrylovError, FrozenStateError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

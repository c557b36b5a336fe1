"""Command line entry point: ``gapblowup <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

from . import experiments as ex
from . import pde2d, rates

log = logging.getLogger("gapblowup")


def _grid(text: str):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must look like 513x65")


def _ints(text: str):
    return tuple(int(s) for s in text.split(",") if s.strip())


def _floats(text: str):
    return tuple(float(s) for s in text.split(",") if s.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file ([experiment] section)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for independent runs")
    common.add_argument("--dump-grid", action="store_true", help="also write grid.csv (solve only)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gapblowup", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("rates", parents=[common], help="exponent table")
    s.add_argument("--n-min", type=int, default=3)
    s.add_argument("--n-max", type=int, default=8)
    s.add_argument("--k-max", type=int, default=6)

    s = sub.add_parser("h-certify", parents=[common], help="certify the h-function bounds")
    s.add_argument("--n", type=_ints)
    s.add_argument("--eps", type=_floats)
    s.add_argument("--beta", default=None, help="'auto' (beta_star) or a number")

    s = sub.add_parser("solve", parents=[common], help="one two-sphere benchmark solve")
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--grid", type=_grid, default=(513, 65))
    s.add_argument("--radii", type=_floats, default=None, help="radii for U11 (default sqrt(eps))")

    for name, helptext in (
        ("sweep", "lower-bound epsilon sweep"),
        ("local-gap", "upper-bound runs in the flattened gap"),
        ("mode-decay", "modal decay certificates"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--n", type=_ints)
        s.add_argument("--eps", type=_floats, help="explicit eps schedule")
        s.add_argument("--grid", type=_grid)
        if name == "mode-decay":
            s.add_argument("--k", type=_ints)
    return p


def _config(args, experiment: str) -> ex.ExperimentConfig:
    over = {"experiment": experiment}
    if getattr(args, "n", None) is not None:
        over["n"] = args.n if isinstance(args.n, tuple) else (args.n,)
    if getattr(args, "eps", None) is not None:
        over["eps_values"] = args.eps if isinstance(args.eps, tuple) else (args.eps,)
    for key in ("grid", "k", "beta", "threads", "out"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if experiment == "rates":
        over["n"] = (args.n_min,)
        over["n_max"] = args.n_max
        over["k_max"] = args.k_max
    if args.config:
        return ex.load_config(args.config, **over)
    defaults = {
        "local-gap": {"eps_values": (1e-3,), "grid": (513, 33)},
        "h-certify": {"n": (3, 4, 5), "eps_values": (1e-2, 1e-3, 1e-4)},
        "mode-decay": {"n": (3, 4), "eps_values": (1e-2, 1e-3)},
    }.get(experiment, {})
    merged = dict(defaults)
    merged.update(over)
    return ex.ExperimentConfig(**merged)


def _solve_command(args) -> int:
    out = args.out or "results"
    os.makedirs(out, exist_ok=True)
    n, eps = args.n, args.eps
    sol = pde2d.solve_reduced_sphere_problem(n, eps, *args.grid, check=False)
    g = pde2d.reconstruct_gradient(sol)
    grid = sol.grid
    u = sol.u
    rows = []
    n1, n2 = grid.shape
    for i in range(n1):
        for j in range(n2):
            rows.append(
                {
                    "i": i, "j": j, "r": grid.r[i, j], "xn": grid.xn[i, j], "u": u[i, j],
                    "ur": g["ur"][i, j], "un": g["un"][i, j], "amplitude": g["amplitude"][i, j],
                }
            )
    ex.write_csv(os.path.join(out, "field.csv"), ("i", "j", "r", "xn", "u", "ur", "un", "amplitude"), rows)
    radii = args.radii or (math.sqrt(eps),)
    summary = {
        "n": n,
        "eps": eps,
        "grid": list(args.grid),
        "u11": {f"{r:.12g}": pde2d.gap_average(sol, r, eps) for r in radii},
        "sup_gradient_2sqrt_eps": pde2d.sup_gradient(sol, 2 * math.sqrt(eps)),
        "subsolution_margin": pde2d.subsolution_margin(sol),
        "solve_report": sol.report.as_dict(),
    }
    ex.dump_json(summary, os.path.join(out, "summary.json"))
    if args.dump_grid:
        grid.dump_csv(os.path.join(out, "grid.csv"))
    print(f"U11(sqrt eps) = {summary['u11'][f'{radii[0]:.12g}']:.8g}, "
          f"sup gradient = {summary['sup_gradient_2sqrt_eps']:.8g}, converged = {sol.report.converged}")
    return 0 if sol.report.converged else 1


def _print_table(record) -> None:
    cols = record.columns
    print("  ".join(f"{c:>18}" for c in cols))
    for row in record.points:
        print("  ".join(f"{row[c]:>18}" if isinstance(row[c], int) else f"{row[c]:>18.12g}" for c in cols))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "solve":
        return _solve_command(args)
    try:
        cfg = _config(args, args.command)
    except (ex.ConfigError, rates.DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    record = ex.run(cfg)
    out = args.out or cfg.out
    ex.emit_results(record, out)
    if args.command == "rates":
        _print_table(record)
    for name, c in sorted(record.checks.items()):
        status = "PASS" if c["passed"] else "FAIL"
        value = "" if c["value"] is None else f" value={c['value']:.6g}"
        print(f"{status} {name}{value}")
    for note in record.notes:
        print(f"note: {note}")
    return 0 if record.passed else 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point ``projfpe``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import ProjFPEError, UsageError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("projfpe")


def _parser():
    ap = argparse.ArgumentParser(prog="projfpe",
                                 description="Fisher-metric projection of Fokker-Planck dynamics")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help="output directory (overrides config 'output')")
    common.add_argument("--seed", type=int, metavar="U64", help="Monte Carlo seed")
    common.add_argument("--grid-nodes", type=int, metavar="N", help="total quadrature nodes")
    common.add_argument("--quiet", action="store_true", help="only report warnings and errors")
    for name, text in (("project", "integrate the projected parameter ODE"),
                       ("reconstruct", "drift grids, path simulation and histogram distances"),
                       ("simulate", "path simulation and histogram distances only"),
                       ("converge", "nested-family convergence sweep"),
                       ("oracle", "reference densities and distance tables")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config", help="JSON configuration file")
    sub.add_parser("geometry-check", parents=[common], help="exponential-manifold identities")
    return ap


def _load(args):
    cfg = harness.ExperimentConfig.from_file(args.config)
    if args.grid_nodes is not None:
        cfg = cfg.with_grid_nodes(args.grid_nodes)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must fit in an unsigned 64-bit integer")
        cfg.mc = dict(cfg.mc, seed=args.seed)
    return cfg


def _run(args):
    if args.command == "geometry-check":
        rows = harness.run_geometry_check(args.out, seed=args.seed or 0)
        for name, value, tol, ok in rows:
            log.info("%-28s %.3e (tol %.0e) %s", name, value, tol, "ok" if ok else "FAIL")
        return EXIT_OK if all(r[3] for r in rows) else EXIT_NUMERICAL
    cfg = _load(args)
    out = args.out or cfg.output
    if args.command == "project":
        run = harness.run_projection(cfg, out)
        for k, v in run.summary().items():
            log.info("%s = %s", k, v)
    elif args.command in ("reconstruct", "simulate"):
        run = harness.run_reconstruction(cfg, out, write_ustar=args.command == "reconstruct")
        log.info("L1 = %.5f  hellinger = %.5f  excluded = %d",
                 run.distances.L1, run.distances.hellinger, run.ensemble.excluded)
    elif args.command == "converge":
        rep = harness.run_convergence(cfg, out)
        for row in rep.table():
            log.info("m=%s %s L1=%.4g hellinger=%.4g residual_t0=%.4g", *row[:4], row[5])
    elif args.command == "oracle":
        res = harness.run_oracle(cfg, out)
        for pair, l1, hell, kl in res["distances"]:
            log.info("%s: L1=%.4g hellinger=%.4g KL=%.4g", pair, l1, hell, kl)
    log.info("outputs written to %s", out)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _run(args)
    except ProjFPEError as exc:
        if isinstance(exc, UsageError) or getattr(exc, "during_validation", False):
            log.error("invalid configuration: %s", exc)
            return EXIT_VALIDATION
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        log.error("cannot write outputs: %s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

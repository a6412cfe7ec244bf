"""Command-line entry point.

Exit codes: 0 success, 1 failed seed or certificate, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import theory
from .config import ConfigFileError, apply_overrides, load_config
from .harness import default_jobs, horizon_sweep, run_sweep, version_string
from .plot import PlotError, plot_aggregates

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
SUITES = ("all", "lemma1", "lemma2", "theorem1")

log = logging.getLogger("tabular_distrl")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML config or JSON metadata sidecar")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="section.key=value, repeatable; lists are comma separated")
    p.add_argument("--jobs", type=int, default=None, metavar="N", help="worker processes (default: all cores)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabular-distrl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version_string())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _config_args(sub.add_parser("run", help="one experiment: every seed of one (env, agent)"))
    _config_args(sub.add_parser("sweep", help="sweep.agents x sweep.horizons grid"))

    v = sub.add_parser("verify", help="run contraction certificate suites")
    v.add_argument("--suite", choices=SUITES, default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--jobs", type=int, default=None, metavar="N")
    v.add_argument("--out", metavar="PATH", help="write the JSON report here instead of stdout")
    v.add_argument("--slack-coef", type=float, default=theory.DEFAULT_SLACK_COEF,
                   help="Monte-Carlo slack = coef * R_max / (1 - gamma) / sqrt(m)")
    v.add_argument("--tol", type=float, default=theory.LEMMA2_TOL, help="tolerance for the exact Lipschitz checks")
    v.add_argument("--atoms", type=int, default=4000, help="atoms per return distribution")
    v.add_argument("--independent-draws", action="store_true",
                   help="drive the two sides with independent samples instead of common random numbers")
    v.add_argument("--lemma1-count", type=int, default=100)
    v.add_argument("--lemma2-count", type=int, default=50)

    pl = sub.add_parser("plot", help="SVG learning curves from aggregate CSVs")
    pl.add_argument("csv", nargs="+", help="aggregate CSV files sharing a step grid")
    pl.add_argument("--out", metavar="PATH", default="curves.svg")
    return parser


def _load(args):
    cfg = load_config(args.config)
    overrides = list(args.override)
    if args.out:
        overrides.append(f"output.dir={args.out}")
    return apply_overrides(cfg, overrides)


def cmd_run(args) -> int:
    cfg = _load(args)
    jobs = args.jobs or default_jobs()
    result = run_sweep(cfg, jobs, cfg.output.dir)
    agg = result.aggregate
    print(
        f"{cfg.env.name} n={cfg.env.n} {cfg.agent.name}: final mean {agg.mean[-1]:.4f} "
        f"stderr {agg.stderr[-1]:.4f} over {agg.num_seeds} seeds -> {cfg.output.dir}"
    )
    if result.failed_seeds:
        print(f"failed seeds: {result.failed_seeds}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = horizon_sweep(cfg, jobs=args.jobs or default_jobs(), out_dir=cfg.output.dir)
    print(f"{'n':>4}  {'agent':<14}{'mean':>8}{'stderr':>9}")
    for r in rows:
        print(f"{r.n:>4}  {r.agent:<14}{r.mean:>8.4f}{r.stderr:>9.4f}")
    failed = [r for r in rows if r.num_seeds < len(cfg.seeds)]
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_verify(args) -> int:
    if args.slack_coef < 0 or args.tol < 0 or args.atoms < 1:
        raise ConfigFileError("--slack-coef and --tol must be >= 0 and --atoms >= 1")
    start = time.perf_counter()
    certs: list[theory.Certificate] = []
    if args.suite in ("all", "lemma1"):
        certs += theory.lemma1_suite(args.lemma1_count, args.seed, m=args.atoms, slack_coef=args.slack_coef,
                                     jobs=args.jobs or default_jobs(), coupled=not args.independent_draws)
    if args.suite in ("all", "lemma2"):
        certs += theory.lemma2_suite(args.lemma2_count, args.seed, tol=args.tol)
    if args.suite in ("all", "theorem1"):
        certs += theory.theorem1_suite(args.seed, m=args.atoms, slack_coef=args.slack_coef,
                                       coupled=not args.independent_draws)
    failed = [c for c in certs if not c.passed]
    report = {
        "suite": args.suite,
        "seed": args.seed,
        "coupled": not args.independent_draws,
        "version": version_string(),
        "wall_clock_seconds": time.perf_counter() - start,
        "num_certificates": len(certs),
        "num_failed": len(failed),
        "failed": [{"name": c.name, "margin": c.margin, "offending": c.details.get("offending", [])} for c in failed],
        "certificates": [c.to_record() for c in certs],
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"{len(certs) - len(failed)}/{len(certs)} certificates passed -> {args.out}")
    else:
        sys.stdout.write(text)
    for c in failed:
        print(f"FAILED {c.name}: lhs={c.lhs:.6g} bound={c.bound:.6g} slack={c.slack:.3g} margin={c.margin:.3g}",
              file=sys.stderr)
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_plot(args) -> int:
    path = plot_aggregates(args.csv, args.out)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (ConfigFileError, PlotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

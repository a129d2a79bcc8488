"""Command-line interface.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 benchmark finished with degraded cells.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from cfsbayes.config import RunConfig, loads_config, read_config
from cfsbayes.errors import ConfigError, DomainError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_DEGRADED = 0, 2, 3, 4

log = logging.getLogger("cfsbayes")


def bundled(name: str) -> str:
    """Text of a file shipped in ``cfsbayes/data``."""
    return resources.files("cfsbayes").joinpath("data", name).read_text()


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfsbayes", description=__doc__.splitlines()[0] or None)
    p.add_argument("--config", metavar="PATH", help="run configuration file")
    p.add_argument("--seed", type=int, help="scenario/sampler seed; master seed for crb and bench")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker processes for bench (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize a scenario file")
    s.add_argument("--snr", type=float, help="override snr_db")
    s.add_argument("--name", default="scenario.txt", help="file name inside --out")

    for name, hlp in (("estimate", "run one estimation and print the report"),
                      ("trace", "run one estimation and dump the chain")):
        e = sub.add_parser(name, help=hlp)
        e.add_argument("--strategy", choices=("s1", "s2"), default="s2")
        src = e.add_mutually_exclusive_group()
        src.add_argument("--scenario", metavar="PATH", help="scenario file (default: synthesize from config)")
        src.add_argument("--demo", action="store_true", help="use the bundled demo scenario")
        if name == "estimate":
            e.add_argument("--dump-trace", action="store_true", help="also write trace.csv")

    c = sub.add_parser("crb", help="emit the RCRB table")
    c.add_argument("--sigma-scale", type=float, help="multiply the noise level (default from config)")
    c.add_argument("--draws", type=int, help="scenarios averaged per cell")

    b = sub.add_parser("bench", help="run the Monte Carlo sweep and write bench.csv")
    b.add_argument("--emit-plot-data", action="store_true", help="also write one CSV per plotted series")
    return p


def _load_config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    path = Path(args.config)
    try:
        if not path.exists() and path.name == args.config:
            # bare names fall back to the configs shipped with the package
            return loads_config(bundled(args.config))
        return read_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.config}: {exc}") from exc


def _out_dir(args, default: str | None = None) -> Path | None:
    d = args.out if args.out is not None else default
    if d is None:
        return None
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _scenario(args, cfg: RunConfig):
    from cfsbayes.sensing import loads_scenario, read_scenario, synthesize_scenario

    if args.demo:
        return loads_scenario(bundled("demo_scenario.txt"))
    if args.scenario:
        try:
            return read_scenario(args.scenario)
        except OSError as exc:
            raise ConfigError(f"cannot read {args.scenario}: {exc}") from exc
    return synthesize_scenario(cfg.scenario, args.seed or 0)


def cmd_simulate(args, cfg: RunConfig) -> int:
    from cfsbayes.sensing import synthesize_scenario, write_scenario

    sc_cfg = cfg.scenario if args.snr is None else replace(cfg.scenario, snr_db=args.snr)
    sc = synthesize_scenario(sc_cfg, args.seed or 0)
    path = _out_dir(args, ".") / args.name
    write_scenario(path, sc)
    print(path)
    return EXIT_OK


def cmd_estimate(args, cfg: RunConfig) -> int:
    from cfsbayes.dict_learning import s1_estimate, s2_estimate

    sc = _scenario(args, cfg)
    est = cfg.estimation_config(sc.cfg)
    fn = s1_estimate if args.strategy == "s1" else s2_estimate
    dump = args.command == "trace" or getattr(args, "dump_trace", False)
    res = fn(sc.y, sc.phi, est, seed=args.seed or 0, keep_trace=dump)
    report = f"strategy={args.strategy}\n" + res.report()
    sys.stdout.write(report)
    out = _out_dir(args, "." if dump else None)
    if out is not None:
        (out / "report.txt").write_text(report)
        (out / "x_map.csv").write_text(res.x_map_csv())
        if dump:
            res.trace.write_csv(out / "trace.csv")
    return EXIT_OK


def cmd_crb(args, cfg: RunConfig) -> int:
    from cfsbayes.crb import CrbSweep, rcrb_csv, rcrb_curves

    b = cfg.bench
    opts = dict(cfg.crb)
    if args.sigma_scale is not None:
        opts["sigma_scale"] = args.sigma_scale
    if args.draws is not None:
        opts["draws"] = args.draws
    sweep = CrbSweep(b.snr_grid, b.m_over_l, b.matrix_kinds, master_seed=b.master_seed if args.seed is None
                     else args.seed, scenario=cfg.scenario, **opts)
    text = rcrb_csv(rcrb_curves(sweep))
    sys.stdout.write(text)
    out = _out_dir(args)
    if out is not None:
        (out / "rcrb.csv").write_text(text)
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    from cfsbayes.bench import run_bench

    if args.seed is not None:
        cfg = replace(cfg, bench=replace(cfg.bench, master_seed=args.seed))
    table = run_bench(cfg, threads=args.threads)
    out = _out_dir(args, ".")
    (out / "bench.csv").write_text(table.to_csv())
    if args.emit_plot_data:
        for name, text in table.plot_data().items():
            (out / name).write_text(text)
    sys.stdout.write(table.to_csv())
    if table.degraded:
        log.warning("one or more cells are degraded (more than 20%% of trials failed)")
        return EXIT_DEGRADED
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "trace": cmd_estimate, "crb": cmd_crb,
            "bench": cmd_bench}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, DomainError) as exc:
        print(f"cfsbayes: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"cfsbayes: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

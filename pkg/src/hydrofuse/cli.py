"""Command-line entry point: ``hydrofuse <subcommand> ...``.

Settings are resolved as defaults, then command-line flags, then the JSON
file given with ``--config`` (the config file wins). Relative paths inside a
config file are taken relative to that file. Exit codes: 0 success, 1 some
scenario (or theory check) failed, 2 configuration or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .errors import HydrofuseError, ParseError, ValidationError
from .filters import EstimatorConfig
from .fileio import (atomic_write_text, dump_json, load_batch, load_layout, load_network,
                     write_measurements)
from .hydraulics import generate_scenario
from .network import build_structural
from .pipeline import (ALL_ESTIMATORS, OUTPUT_DIR_ENV, RunConfig, document_long_tables, load_results,
                       run_batch, summary_text, write_desk_bundle)

log = logging.getLogger("hydrofuse")

EXIT_OK, EXIT_FAILURES, EXIT_CONFIG = 0, 1, 2
DEFAULT_OUTPUT_DIR = "hydrofuse-out"

# RunConfig fields set from flags of the same name
_RUN_FLAGS = ("network_path", "layout_path", "scenario_batch_path", "measurement_ingest_path", "output_dir",
              "rng_seed", "parallelism", "threshold", "reference_scenario_id")


def _default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR


def _add_run_flags(p: argparse.ArgumentParser, localize: bool):
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON run config; its values override flags")
    p.add_argument("--network", dest="network_path", default=S, help="network JSON file")
    p.add_argument("--layout", dest="layout_path", default=S, help="sensor layout JSON file")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenarios", dest="scenario_batch_path", default=S, help="scenario batch JSON (synthetic)")
    src.add_argument("--measurements", dest="measurement_ingest_path", default=S, help="measurement CSV to ingest")
    p.add_argument("--output-dir", dest="output_dir", default=S,
                   help=f"output directory (default: ${OUTPUT_DIR_ENV} or {DEFAULT_OUTPUT_DIR})")
    p.add_argument("--estimator", dest="estimators", action="append", default=S,
                   choices=[e.value for e in ALL_ESTIMATORS], help="repeat to run several (default: all)")
    p.add_argument("--seed", dest="rng_seed", type=int, default=S, help="root seed for scenarios without one")
    p.add_argument("--parallelism", type=int, default=S, help="worker processes")
    if localize:
        p.add_argument("--threshold", type=float, default=S, help="candidate threshold in [0, 1]")
        p.add_argument("--reference-scenario", dest="reference_scenario_id", default=S,
                       help="leak-free scenario id in the ingested measurements")
    group = p.add_argument_group("estimator tuning")
    for f in fields(EstimatorConfig):
        kind = int if f.name in ("k_d", "max_iters", "patience") else float
        group.add_argument("--" + f.name.replace("_", "-"), dest="est_" + f.name, type=kind, default=S)


def _read_config_file(path: str) -> dict:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(p, f"cannot read file: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(p, f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(data, dict):
        raise ParseError(p, "top level must be an object", 1)
    base = p.resolve().parent
    for key in ("network_path", "layout_path", "scenario_batch_path", "measurement_ingest_path", "output_dir"):
        if isinstance(data.get(key), str):
            data[key] = str(base / data[key])
    return data


def resolve_run_config(args: argparse.Namespace, localize: bool) -> RunConfig:
    """Merge defaults, flags and the config file (in that order of increasing priority)."""
    merged: dict = {"output_dir": _default_output_dir(), "localize": localize}
    est: dict = {}
    ns = vars(args)
    for name in _RUN_FLAGS + ("estimators",):
        if name in ns:
            merged[name] = ns[name]
    for key, value in ns.items():
        if key.startswith("est_"):
            est[key[4:]] = value
    if args.config:
        data = _read_config_file(args.config)
        est.update(data.pop("estimator_config", None) or {})
        merged.update(data)
    merged["estimator_config"] = est
    missing = [k for k in ("network_path", "layout_path") if k not in merged]
    if missing:
        raise ValidationError("missing required setting(s): " + ", ".join(missing))
    return RunConfig.from_mapping(merged)


def _cmd_run(args, localize: bool) -> int:
    config = resolve_run_config(args, localize)
    result = run_batch(config)
    sys.stdout.write(Path(result.files["summary.txt"]).read_text(encoding="utf-8"))
    log.info("wrote %d files to %s", len(result.files), config.output_dir)
    if result.failures:
        log.error("%d scenario(s) had failures: %s", len(result.failures), ", ".join(result.failures))
    return result.exit_code


def _cmd_generate(args) -> int:
    out = Path(args.output_dir or _default_output_dir())
    if args.network:
        if not (args.layout and args.scenarios):
            raise ValidationError("--network needs --layout and --scenarios")
        net = load_network(args.network)
        lay = load_layout(args.layout, net)
        batch = load_batch(args.scenarios, net, root_seed=args.seed)
        st = build_structural(net)
        records = [(s.scenario_id, generate_scenario(net, lay, s, batch.noise, structural=st)[1])
                   for s in batch.scenarios]
        path = write_measurements(out / "measurements.csv", records, lay, net)
        print(f"wrote {len(records)} scenario(s) to {path}")
        return EXIT_OK
    if args.nodes is None:
        raise ValidationError("give --nodes for a synthetic bundle, or --network/--layout/--scenarios")
    files = write_desk_bundle(out, n_nodes=args.nodes, seed=args.seed, scenarios=args.count,
                              pressure_fraction=args.pressure_fraction, amr_fraction=args.amr_fraction,
                              with_measurements=args.with_measurements)
    for name, path in files.items():
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_validate_theory(args) -> int:
    from .synthetic import desk_layout, leak_batch, random_network
    from .theory import check_monotone_error, theory_battery

    outcomes = theory_battery(args.seed, args.instances, args.max_n)
    cfg = EstimatorConfig()
    for i in range(args.pipeline_runs):
        net = random_network(args.pipeline_nodes, args.seed + i)
        lay = desk_layout(net, args.seed + i)
        sc = leak_batch(net, lay, 1, args.seed + i)[0]
        outcomes.append(check_monotone_error(net, lay, cfg, sc, iterations=args.iterations,
                                             instance={"seed": args.seed + i}))
    out = Path(args.output_dir or _default_output_dir())
    rows = []
    for o in outcomes:
        row = o.as_row()
        if "sigma_bar" in o.details:
            row["sigma_bar"] = o.details["sigma_bar"]
        rows.append(row)
    doc = {"format": "hydrofuse.theory", "version": 1, "seed": args.seed, "checks": rows,
           "passed": sum(o.passed for o in outcomes), "failed": sum(not o.passed for o in outcomes)}
    atomic_write_text(out / "theory_results.json", dump_json(doc))
    lines = [f"{'check':<22}{'runs':>6}{'passed':>8}{'worst margin':>15}"]
    for name in dict.fromkeys(o.check_name for o in outcomes):
        group = [o for o in outcomes if o.check_name == name]
        lines.append(f"{name:<22}{len(group):>6}{sum(o.passed for o in group):>8}"
                     f"{min(o.margin for o in group):>15.3e}")
    sig = [o.details["sigma_bar"] for o in outcomes if "sigma_bar" in o.details]
    if sig:
        lines.append(f"sigma_bar over pipeline runs: min {min(sig):.4f}, max {max(sig):.4f}")
    text = "\n".join(lines) + "\n"
    atomic_write_text(out / "theory_table.txt", text)
    sys.stdout.write(text)
    return EXIT_OK if doc["failed"] == 0 else EXIT_FAILURES


def _cmd_report(args) -> int:
    from .plotting import render_report

    doc = load_results(args.results)
    src = Path(args.results)
    out = Path(args.output_dir) if args.output_dir else (src if src.is_dir() else src.parent) / "report"
    text = summary_text(doc)
    atomic_write_text(out / "summary.txt", text)
    for name, body in document_long_tables(doc).items():
        atomic_write_text(out / name, body)
    figures = render_report(doc, out)
    sys.stdout.write(text)
    for name, path in figures.items():
        print(f"figure {name}: {path}")
    return EXIT_FAILURES if doc["failures"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydrofuse", description="Water-network state estimation and leak "
                                     "localization from sparse pressure, demand and flow sensors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic input bundle or measurements for a batch")
    g.add_argument("--output-dir", help="destination directory")
    g.add_argument("--nodes", type=int, help="node count of the random network (bundle mode)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=5, help="leak scenarios in the bundle")
    g.add_argument("--pressure-fraction", type=float, default=0.15)
    g.add_argument("--amr-fraction", type=float, default=0.15)
    g.add_argument("--with-measurements", action="store_true", help="also write noisy readings (plus a REF snapshot)")
    g.add_argument("--network", help="existing network: write measurements for --scenarios instead")
    g.add_argument("--layout")
    g.add_argument("--scenarios")
    g.set_defaults(func=_cmd_generate)

    e = sub.add_parser("estimate", help="run estimators over a batch and score RMSE")
    _add_run_flags(e, localize=False)
    e.set_defaults(func=lambda a: _cmd_run(a, localize=False))

    loc = sub.add_parser("localize", help="estimate, then rank leak candidates and score localization KPIs")
    _add_run_flags(loc, localize=True)
    loc.set_defaults(func=lambda a: _cmd_run(a, localize=True))

    t = sub.add_parser("validate-theory", help="run the numeric checks of the estimator theory")
    t.add_argument("--output-dir")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--instances", type=int, default=100)
    t.add_argument("--max-n", type=int, default=30)
    t.add_argument("--pipeline-runs", type=int, default=20, help="head-only filter runs on synthetic networks")
    t.add_argument("--pipeline-nodes", type=int, default=30)
    t.add_argument("--iterations", type=int, default=200)
    t.set_defaults(func=_cmd_validate_theory)

    r = sub.add_parser("report", help="render tables and figures from a results file")
    r.add_argument("results", help="results.json or the directory containing it")
    r.add_argument("--output-dir", help="destination (default: <results dir>/report)")
    r.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HydrofuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

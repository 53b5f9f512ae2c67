"""Command-line entry point: ``latenttrack <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiment, metrics
from .config import MODEL_KINDS, SYNTH_KINDS, ConfigError, format_seeds, parse_seeds, resolve_config, solve_budget
from .data import jena_stream, save_stream, synth_stream

OUT_ENV = "LATENTTRACK_OUT"


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "runs")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seeds", help="seed range a..b (inclusive) or comma list")
    p.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")


def _config(args):
    overrides = list(args.overrides)
    if args.seeds:
        overrides.append(f"seeds = {args.seeds}")
    if args.out:
        overrides.append(f"out = {args.out}")
    cfg = resolve_config(args.config, overrides)
    if not cfg.out:
        cfg.out = _default_out()
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    run_dir, failed = experiment.run_experiment(cfg, cfg.out, jobs=args.jobs)
    print(f"run directory: {run_dir}")
    print(f"config hash: {cfg.hash()}")
    if failed:
        print(f"failed seeds: {format_seeds(failed)}", file=sys.stderr)
        return 1
    agg = json.loads((run_dir / "aggregate.json").read_text())
    print(json.dumps(agg["median_of_seeds"], indent=2))
    print(f"failure_rate: {agg['failure_rate']}")
    return 0


def cmd_evaluate(args) -> int:
    """Re-score persisted checkpoints on the configured stream."""
    run_dir = Path(args.run_dir)
    cfg = resolve_config(run_dir / "config.txt", args.overrides)
    stream = experiment.load_data(cfg)
    seeds = parse_seeds(args.seeds) if args.seeds else cfg.seeds
    out = Path(args.out) if args.out else run_dir / "reeval"
    out.mkdir(parents=True, exist_ok=True)
    for s in seeds:
        model = experiment.load_model(run_dir / f"seed-{s:03d}")
        series = experiment.evaluate_model(cfg, model, stream, s,
                                           {"model": cfg.model, "seed": s, "config_hash": cfg.hash(),
                                            "dataset_hash": stream.content_hash()})
        series.save(out / f"seed-{s:03d}.tsv")
        summ = metrics.temporal_summary(series.nll)
        print(f"seed {s}: nll mean {summ['mean']:.6g} trimmed median {summ['trimmed_median']:.6g}")
    return 0


def cmd_compare(args) -> int:
    report = experiment.compare(args.run_dirs)
    text = experiment.format_report(report)
    print(text)
    if args.out:
        Path(args.out).write_text(text)
        Path(args.out).with_suffix(".json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_gradcheck

    results = run_gradcheck(draws=args.draws)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{status}\t{r.name}\tparams={r.n_params}\tdraws={r.draws}\tmax_rel_err={r.max_rel_error:.3e}")
    print(f"tolerance {TOLERANCE:g}: {'all passed' if ok else 'FAILED'}")
    return 0 if ok else 1


def cmd_budget(args) -> int:
    kinds = args.models or list(MODEL_KINDS)
    print("model\ttotal\tinference_time\ttarget_total\twidths\tstatus")
    ok = True
    for k in kinds:
        sol = solve_budget(k, args.x_dim)
        ok &= sol.feasible
        print(sol.row())
    return 0 if ok else 1


def cmd_emit_figures(args) -> int:
    which = args.which.split(",") if args.which else metrics.FIGURES
    bad = [w for w in which if w not in metrics.FIGURES]
    if bad:
        raise ConfigError(f"unknown figure(s) {bad}; choose from {metrics.FIGURES}")
    for p in experiment.emit_figures(args.run_dirs, args.out, which):
        print(p)
    return 0


def cmd_synth(args) -> int:
    if args.jena:
        stream = jena_stream(args.jena)
    else:
        stream = synth_stream(args.kind, args.length, seed=args.seed)
    save_stream(stream, args.output)
    print(f"wrote {len(stream)} steps (x_dim={stream.x_dim}, split={stream.split}) to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latenttrack", description="Latent filtering with generated predictors.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train, evaluate and persist every seed of one model")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="re-score saved checkpoints")
    p.add_argument("run_dir")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seeds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="multi-model summary table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", help="also write the report here (plus a .json twin)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--draws", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("budget", help="solve and print the parameter ledger")
    p.add_argument("--x-dim", type=int, default=116, help="input width (116 for the weather stream)")
    p.add_argument("--models", nargs="*", choices=MODEL_KINDS)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("emit-figures", help="write figure-feeding tables for a set of runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--which", help=f"comma list from {','.join(metrics.FIGURES)}")
    p.set_defaults(func=cmd_emit_figures)

    p = sub.add_parser("synth", help="write a synthetic (or preprocessed weather) stream to disk")
    p.add_argument("--kind", choices=SYNTH_KINDS, default="regime_switch")
    p.add_argument("--length", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jena", help="preprocess this weather CSV instead")
    p.add_argument("output")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, experiment.ExperimentError, ValueError, FileNotFoundError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

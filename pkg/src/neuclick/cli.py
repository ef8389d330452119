"""``neuclick`` command line: ingest, train, evaluate, simulate, report.

Exit codes: 0 ok, 2 configuration, 3 data, 4 numeric, 1 anything else.  Failures
print one JSON object on stderr: ``{"error": ..., "exit_code": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import yaml

from . import pipeline
from .config import ExperimentConfig
from .errors import ConfigurationError, DataError, NeuclickError, NumericError
from .evaluation import emit_results_table
from .simulator import serve

log = logging.getLogger("neuclick")


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigurationError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = dict(_parse_override(s) for s in args.set or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["train.seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    return cfg.with_overrides(overrides) if overrides else cfg


def _run_dir(args: argparse.Namespace) -> Path:
    if args.run:
        return Path(args.run)
    return pipeline.run_dir_for(resolve_config(args))


def cmd_ingest(args) -> int:
    out = pipeline.run_ingest(resolve_config(args), args.out)
    print(json.dumps({"data_dir": str(out)}))
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out, result = pipeline.run_train(cfg, force=args.force)
    for w in result.warnings:
        log.warning(w)
    print(json.dumps({"run_dir": str(out), "config_hash": cfg.config_hash(), "best_epoch": result.best_epoch}))
    return 0


def cmd_evaluate(args) -> int:
    report = pipeline.run_evaluate(_run_dir(args), args.baseline or ())
    print(report.to_json())
    return 0


def cmd_simulate(args) -> int:
    cfg, model = pipeline.load_run(_run_dir(args))
    seed = cfg.seed if args.seed is None else args.seed
    serve(model, sys.stdin, sys.stdout, seed=seed, max_len=cfg.train.max_session_len)
    return 0


def cmd_report(args) -> int:
    table = emit_results_table(pipeline.load_reports(args.runs), args.datasets)
    sys.stdout.write(table.to_text())
    if args.csv:
        Path(args.csv).write_text(table.to_csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neuclick", description="Neural click models for slate recommendation.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp):
        sp.add_argument("--config", help="experiment YAML")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. train.epochs=5")
        sp.add_argument("--output-dir")

    sp = sub.add_parser("ingest", help="load or generate data and write canonical splits")
    config_flags(sp)
    sp.add_argument("--out", help="destination directory")
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("train", help="train one model; writes a content-addressed run directory")
    config_flags(sp)
    sp.add_argument("--force", action="store_true", help="overwrite an existing run")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("evaluate", help="test-set metrics for a trained run")
    config_flags(sp)
    sp.add_argument("--run", help="run directory (otherwise derived from the config)")
    sp.add_argument("--baseline", action="append", help="run directory to bootstrap against")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("simulate", help="serve a trained model as a user simulator over stdin/stdout")
    config_flags(sp)
    sp.add_argument("--run", help="run directory (otherwise derived from the config)")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("report", help="results table from evaluated runs")
    sp.add_argument("runs", nargs="+", help="run directories or report.json files")
    sp.add_argument("--csv", help="also write the table as CSV")
    sp.add_argument("--datasets", nargs="*", help="dataset column order")
    sp.set_defaults(fn=cmd_report)
    return p


def error_record(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, NeuclickError):
        code = exc.exit_code
    elif isinstance(exc, (FloatingPointError, OverflowError)):
        code = NumericError.exit_code
    elif isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError, UnicodeDecodeError)):
        code = DataError.exit_code
    else:
        code = 1
    message = " ".join(str(exc).split()) or type(exc).__name__
    return code, json.dumps({"error": type(exc).__name__, "exit_code": code, "message": message})


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else ConfigurationError.exit_code
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one record line
        code, line = error_record(exc)
        print(line, file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface: ``lmsgnn synth | run | check``.

Exit codes: 0 success, 1 configuration or usage error, 2 data error,
3 numerical failure (including failed self-checks).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import BundleManifest, write_signal_csv
from .errors import ConfigError, LmsGnnError, NumericalFailure
from .graph import write_coords_csv
from .harness import ESTIMATORS, ExperimentConfig, emit_report, prepare_data, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("lmsgnn")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; here 2 means bad data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _estimator_list(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in ESTIMATORS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"expected a comma list drawn from {','.join(ESTIMATORS)}")
    return names


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lmsgnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset bundle")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", parents=[common], help="run an experiment and write the report")
    p.add_argument("--estimators", type=_estimator_list, help=f"comma list from {','.join(ESTIMATORS)}")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", parents=[common], help="run the invariant suite on a small instance")
    p.set_defaults(func=cmd_check)
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig() if args.config is None else ExperimentConfig.from_json(args.config)
    doc = cfg.to_dict()
    if args.seed is not None:
        doc["seed"] = args.seed
    if getattr(args, "estimators", None):
        doc["estimators"] = args.estimators
    if args.out is not None:
        doc["out_dir"] = str(args.out)
    return ExperimentConfig.from_dict(doc)


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if cfg.dataset["source"] != "synth":
        raise ConfigError("synth needs a config whose dataset.source is 'synth'")
    out = Path(cfg.out_dir or "bundle")
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare_data(cfg)
    write_signal_csv(out / "signal.csv", prepared.ground_truth.ground_truth)
    write_coords_csv(out / "coords.csv", prepared.coords)
    BundleManifest("signal.csv", "coords.csv", cfg.noise_vars[0], cfg.sampling["strategy"],
                   cfg.sampling["rho"], cfg.seed).write(out / "bundle.json")
    run_doc = cfg.to_dict()
    run_doc["dataset"] = {"source": "csv", "signal": "signal.csv", "coords": "coords.csv"}
    run_doc["f_count"] = min(cfg.f_count, cfg.dataset["signal_f_count"])
    run_doc["out_dir"] = None
    (out / "config.json").write_text(json.dumps(run_doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}/signal.csv, coords.csv, bundle.json, config.json")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir or "report")
    report = run_experiment(cfg)
    emit_report(report, out)
    header = f"{'VAR':>6}  " + "  ".join(f"{e:>10}" for e in cfg.estimators)
    for metric in ("mse", "mae"):
        print(f"averaged {metric.upper()}")
        print(header)
        for var in cfg.noise_vars:
            vals = []
            for e in cfg.estimators:
                s = report.get(e, var)
                vals.append("error" if s is None else f"{getattr(s, 'mean_' + metric):.4g}")
            print(f"{var:>6g}  " + "  ".join(f"{v:>10}" for v in vals))
    for err in report.errors:
        print(f"cell ({err.estimator}, VAR={err.noise_var:g}) failed: {err.kind}: {err.message}", file=sys.stderr)
    print(f"report written to {out}")
    if any(err.kind == NumericalFailure.__name__ for err in report.errors):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    cfg = _load_config(args)
    return EXIT_OK if run_checks(seed=cfg.seed) else EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (LmsGnnError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``spurcorr <command> [--config FILE] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import covmodel, experiments
from .config import load_config
from .errors import ConfigError, ParameterRangeError, SpurcorrError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key by dotted path (value parsed as JSON); repeatable")
    p.add_argument("--desk", action="store_true", help="scale the defaults down to d=100, n=500")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spurcorr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in [
        ("curves", "deterministic and empirical C/L curves over the lambda grid"),
        ("simplicity", "C/L as ev_max_yy or beta varies at fixed lambda"),
        ("rf-equiv", "random-features equivalence ladder and spurious covariance"),
    ]:
        _common(sub.add_parser(name, help=help_))

    p = sub.add_parser("tau", help="print tau, C and L at one lambda as JSON")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)

    p = sub.add_parser("validate-model", help="check a covariance model and print diagnostics")
    _common(p)
    p.add_argument("--model", help="model JSON file (default: the config's model)")
    return parser


def _run(args) -> int:
    cfg = load_config(args.config, args.overrides, desk=args.desk)
    if args.command == "tau":
        print(json.dumps(experiments.cmd_tau(cfg, args.lam), indent=2))
        return EXIT_OK
    if args.command == "validate-model":
        if args.model:
            try:
                doc = json.loads(open(args.model).read())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read model file: {exc}") from None
            sigma = np.asarray(doc["sigma"], dtype=float) if "sigma" in doc else covmodel.CovarianceModel.from_dict(doc).sigma
            if sigma.ndim == 1:
                side = int(round(np.sqrt(sigma.size)))
                sigma = sigma.reshape(side, side)
            diag = covmodel.validate(sigma)
        else:
            diag = covmodel.validate(cfg.build_model())
        print(json.dumps(diag.as_dict(), indent=2))
        return EXIT_OK if diag.passed else EXIT_NUMERICAL
    command = {
        "curves": experiments.cmd_curves,
        "simplicity": experiments.cmd_simplicity_sweep,
        "rf-equiv": experiments.cmd_rf_equiv,
    }[args.command]
    files = command(cfg)
    for key, path in files.items():
        print(f"{key}: {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except (ConfigError, ParameterRangeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpurcorrError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

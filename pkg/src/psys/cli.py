"""Command-line front end: ``psys check|oracle|simulate|br --config FILE --out DIR``.

Exit codes: 0 the verdict matches the scenario's ``expected`` field,
1 it does not, 2 the configuration is invalid, 3 the request is
unsupported (for example simulating a signed measure).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, GridTooSmallError, MeasureError, ModelError, SignedMeasureError, UnsupportedModelError
from .scenario import RUNNERS, expectation_met, load_scenario

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_UNSUPPORTED = 0, 1, 2, 3

log = logging.getLogger("psys")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psys", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"psys {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "check": "run the analytic stationarity checker (and the transform oracle)",
        "oracle": "run a grid-convolution oracle",
        "simulate": "simulate a particle system and test shift invariance",
        "br": "simulate a Brown-Resnick process and test margins and stationarity",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--replicates", type=int, default=None, help="override Monte Carlo replicates")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.out)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        sc = load_scenario(args.config, seed=args.seed, replicates=args.replicates)
        if sc.command != args.command:
            raise ConfigError(f"scenario is for command {sc.command!r}, not {args.command!r}")
        outcome = RUNNERS[sc.command](sc, args.threads)
    except (SignedMeasureError, UnsupportedModelError) as exc:
        print(f"psys: unsupported request: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (ConfigError, GridTooSmallError, ModelError, MeasureError) as exc:
        print(f"psys: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    met = expectation_met(sc.expected, outcome.stationary) and "error" not in outcome.report
    code = EXIT_OK if met else EXIT_MISMATCH
    verdict = "stationary" if outcome.stationary else "non-stationary"
    report = {"scenario": sc.name, "command": sc.command, "expected": sc.expected, "verdict": verdict, "expectation_met": met, "result": outcome.report}
    manifest = {
        "scenario": sc.name,
        "command": sc.command,
        "seed": sc.seed,
        "scenario_sha256": sc.digest,
        "expected": sc.expected,
        "verdict": verdict,
        "exit_code": code,
        "outputs": ["report.json", *sorted(outcome.artifacts)],
        **outcome.manifest_extra,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(_dump(report))
    for name, text in sorted(outcome.artifacts.items()):
        (out_dir / name).write_text(text)
    (out_dir / "manifest.json").write_text(_dump(manifest))
    tag = {"pass": "PASS", "fail": "FAIL", "expected-fail": "EXPECTED-FAIL"}[sc.expected]
    print(f"{sc.name}: {verdict} (expected {tag}) -> {'ok' if met else 'MISMATCH'}")
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

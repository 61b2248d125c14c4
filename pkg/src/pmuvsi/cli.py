"""Command line entry point: ``pmuvsi run <scenario> ...``.

Writes ``<scenario>.csv`` and ``<scenario>.json`` into ``--out``. Failures
print a JSON object on stderr and exit non-zero. Log verbosity comes from
``PMUVSI_LOG_LEVEL`` (default ``WARNING``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import CaseError, ConvergenceError, DegenerateCircleError, InfeasibleCircleError
from .harness import ScenarioConfig, ScenarioKind, run_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
LOG_ENV = "PMUVSI_LOG_LEVEL"

_DEFAULT_CASE = {ScenarioKind.THREE_BUS: "three_bus"}
_DEFAULT_NOISE = {ScenarioKind.NOISE_STUDY: (0.001, 0.01)}


def _bus_list(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmuvsi", description="Distributed circle-based voltage stability index")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario and write CSV + JSON")
    run.add_argument("scenario", choices=[k.value for k in ScenarioKind])
    run.add_argument("--case", default=None, help="case file path or bundled name (default case_ieee30)")
    run.add_argument("--seed", type=_u64, default=0)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--lambda-max", type=float, default=None, help="stop load sweeps at this load factor")
    run.add_argument("--noise-sv", type=float, default=None, help="magnitude noise std (p.u.)")
    run.add_argument("--noise-stheta", type=float, default=None, help="angle noise std (degrees)")
    run.add_argument("--refresh-admittance-at", type=float, default=None, help="time (s) agents learn the new topology")
    run.add_argument("--load-buses", type=_bus_list, default=None, help="e.g. 17-30 or 3,5,7")
    run.add_argument("--monitored", type=_bus_list, default=None)
    run.add_argument("--realizations", type=int, default=1000)
    run.add_argument("--q-limits", action="store_true", help="enforce generator reactive limits")
    run.add_argument("--reference", choices=["solved", "flat"], default="solved")
    return p


def config_from_args(args) -> ScenarioConfig:
    kind = ScenarioKind(args.scenario)
    sv, st = _DEFAULT_NOISE.get(kind, (0.0, 0.0))
    return ScenarioConfig(
        kind=kind,
        case=args.case or _DEFAULT_CASE.get(kind, "case_ieee30"),
        seed=args.seed,
        out_dir=args.out,
        lambda_max=args.lambda_max,
        load_buses=args.load_buses,
        enforce_q_limits=args.q_limits,
        reference=args.reference,
        sigma_v=sv if args.noise_sv is None else args.noise_sv,
        sigma_theta=st if args.noise_stheta is None else args.noise_stheta,
        realizations=args.realizations,
        monitored=args.monitored,
        refresh_at=args.refresh_admittance_at,
    )


def _fail(kind: str, message: str, code: int = EXIT_FAIL) -> int:
    json.dump({"error": kind, "message": message}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return EXIT_OK
        return _fail("usage", "invalid command line (see --help)", EXIT_USAGE)
    try:
        result = run_scenario(config_from_args(args))
    except (CaseError, ConvergenceError, DegenerateCircleError, InfeasibleCircleError, ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc))
    json.dump({"scenario": result.scenario, "out": args.out, "summary": f"{result.scenario}.json"}, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

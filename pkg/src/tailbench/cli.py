"""Command-line entry point: ``tailbench run|sweep|verify|bounds``.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 verification
failures present.
"""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="tailbench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir", help="override the config's output_dir")

    s = sub.add_parser("sweep", help="run a parameter sweep from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir", help="override the config's output_dir")

    v = sub.add_parser("verify", help="run the built-in invariant checks")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--json", action="store_true", help="print the report as JSON")

    b = sub.add_parser("bounds", help="tail-index bounds from problem constants")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--d", type=int, required=True)
    b.add_argument("--B", type=int, default=1)
    b.add_argument("--gamma", type=float, required=True)
    b.add_argument("--delta", type=float, default=0.0)
    b.add_argument("--lambda1", type=float, help="largest singular value of A")
    b.add_argument("--spectrum", help="CSV of singular values (one column, any order)")
    return p


def _load_spectrum(path):
    """Singular values from the first column of a CSV; a header row is allowed."""
    from .dataio import CsvParseError
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and r[0].strip()]
    except OSError as exc:
        raise CsvParseError(f"cannot read spectrum file: {exc}") from exc
    vals = []
    for k, row in enumerate(rows, start=1):
        try:
            vals.append(float(row[0]))
        except ValueError:
            if k > 1:
                raise CsvParseError(f"non-numeric value {row[0]!r}", row=k, column=1) from None
    vals = np.sort(np.asarray(vals, dtype=float))[::-1]
    if vals.size == 0 or not np.all(np.isfinite(vals)) or vals[0] <= 0:
        raise CsvParseError(f"spectrum in {path} must be finite with a positive maximum")
    return vals


def _cmd_bounds(args):
    from . import tails
    try:
        if args.spectrum:
            lam = _load_spectrum(args.spectrum)
            rep = tails.bounds_report(args.n, args.d, args.B, args.gamma, args.delta, lambdas=lam)
        elif args.lambda1 is not None:
            rep = tails.bounds_report(args.n, args.d, args.B, args.gamma, args.delta,
                                      lambda1=args.lambda1)
        else:
            print("error: give --lambda1 or --spectrum", file=sys.stderr)
            return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .experiment import dumps
    sys.stdout.write(dumps(rep))
    return EXIT_OK


def _cmd_run(args, sweep):
    from .experiment import ConfigError, ExperimentConfig, run_experiment, run_sweep
    try:
        cfg = ExperimentConfig.load(args.config)
        if sweep and cfg.sweep is None:
            raise ConfigError("sweep config needs a 'sweep' block")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if sweep:
            res = run_sweep(cfg, args.output_dir)
            for row in res["rows"]:
                print(",".join("" if v is None else f"{v:.6g}" for v in row))
            failed = res["failures"]
        else:
            res = run_experiment(cfg, args.output_dir)
            failed = res["failures"]
            for name, st in res["stages"].items():
                print(f"{name}: {st['status']}" + (f" ({st['detail']})" if "detail" in st else ""))
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"artifacts in {res['output_dir']}")
    if failed:
        print(f"failed stages: {failed}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_verify(args):
    from .verify import report_json, verify_suite
    checks = verify_suite(args.level)
    if args.json:
        from .experiment import dumps
        sys.stdout.write(dumps(report_json(checks)))
    else:
        for c in checks:
            print(c.line())
        print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "bounds":
        return _cmd_bounds(args)
    if args.command == "run":
        return _cmd_run(args, sweep=False)
    if args.command == "sweep":
        return _cmd_run(args, sweep=True)
    return _cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())

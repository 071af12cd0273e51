"""Command line entry point: ``ricciotto <command> --config scenario.toml --out dir``.

Exit status is 0 when every gated check passes, 1 when a check fails or a
stage errors, 2 for a malformed config.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

COMMANDS = ("flow", "perelman", "fokker-planck", "compare-perelman", "transport",
            "entropy-report", "verify", "export")


def build_parser():
    p = argparse.ArgumentParser(prog="ricciotto", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="scenario TOML file (optional for verify)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--level", choices=("fast", "full"), default="fast", help="verify level")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded BLAS and no timing data in the manifest")
    p.add_argument("--tolerance-scale", type=float, default=None,
                   help="divide every verify tolerance by this factor")
    p.add_argument("--criteria", default=None, help="comma-separated criterion ids for verify --level full")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.deterministic:
        os.environ["RICCIOTTO_THREADS"] = "1"
    n = os.environ.get("RICCIOTTO_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n

    from . import harness

    cfg = None
    if args.config:
        try:
            cfg = harness.load_config(args.config)
        except (harness.ConfigError, OSError) as exc:
            field = getattr(exc, "field", args.config)
            print(json.dumps({"error": "config", "field": field, "message": str(exc)}), file=sys.stderr)
            return 2
    elif args.command != "verify":
        print(json.dumps({"error": "config", "field": "--config", "message": "required"}), file=sys.stderr)
        return 2
    if cfg is not None and args.seed is not None:
        cfg.seed = args.seed
    out = args.out or (cfg.output if cfg and cfg.output else "out")

    if args.command == "verify":
        scale = args.tolerance_scale
        if scale is None:
            scale = float(cfg.verify.get("tolerance_scale", 1.0)) if cfg else 1.0
        criteria = args.criteria.split(",") if args.criteria else (cfg.verify.get("criteria") if cfg else None)
        ok, results = harness.verify(args.level, out, scale, criteria, log=print)
        n_fail = sum(1 for r in results if r.gated and not r.passed)
        print(f"{'PASS' if ok else 'FAIL'}: {len(results) - n_fail}/{len(results)} checks passed")
        return 0 if ok else 1

    if args.command == "export":
        stages, formats = harness.STAGES, None
    else:
        stages, formats = ("flow", args.command), None
    manifest = harness.run_scenario(cfg, out, stages, args.deterministic, formats)
    for c in manifest.checks:
        print(c.line())
    for e in manifest.errors:
        print(f"ERROR [{e['stage']}] {e['type']}: {e['message']}")
    print(f"{'PASS' if manifest.passed else 'FAIL'}: manifest {os.path.join(out, 'manifest.json')}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())

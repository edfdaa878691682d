"""Command-line entry point: ``glqk generate|experiment|plan|analyze|pca``.

Exit codes: 0 success, 2 invalid argument, 3 numeric failure, 4 resource
limit (1 for any other package error).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import GLQKError, InvalidArgument
from .experiments import (
    ExperimentConfig,
    cmd_analyze,
    cmd_experiment,
    cmd_generate,
    cmd_pca,
    cmd_plan,
    write_json,
)

COMMANDS = ("generate", "experiment", "plan", "analyze", "pca")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glqk", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="experiment configuration JSON")
    ap.add_argument("--pool", help="shadow-pool file (experiment, pca)")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="numba worker threads")
    return ap


def _print_plan(report: dict) -> None:
    cols = ["kernel", "symmetric", "n", "N", "T", "zeta", "h", "lam", "B", "alpha_g", "beta_g"]
    print("  ".join(f"{c:>10}" for c in cols))
    for p in report["plans"]:
        cells = []
        for c in cols:
            v = p[c]
            cells.append(f"{v:>10.4g}" if isinstance(v, float) else f"{str(v):>10}")
        print("  ".join(cells))
        for w in p["warnings"]:
            print(f"    warning: {w}")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 1 << 64:
            raise InvalidArgument("seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.threads:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    out = Path(args.out)
    if args.command in ("experiment", "pca") and not args.pool:
        raise InvalidArgument(f"'{args.command}' needs --pool")

    if args.command == "generate":
        path = cmd_generate(cfg, out)
        print(f"wrote {path} ({cfg.N_pool} entries)")
    elif args.command == "experiment":
        res = cmd_experiment(cfg, args.pool, out)
        for s in res["summary"]:
            print(f"{s['kernel']:>10} {s['target']:>6} n={s['n']} N={s['N_train']} "
                  f"{res['metric']}={s['mean']:.4f} +- {s['std']:.4f}")
    elif args.command == "plan":
        report = cmd_plan(cfg)
        _print_plan(report)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "plan.json", report)
    elif args.command == "analyze":
        report = cmd_analyze(cfg)
        print(json.dumps(report, indent=1, sort_keys=True))
    else:
        cmd_pca(cfg, args.pool, out)
        print(f"wrote {out / 'pca.csv'}")
    return 0


def main(argv=None) -> int:
    try:
        code = run(argv)
    except GLQKError as exc:
        print(f"glqk: error: {exc}", file=sys.stderr)
        code = exc.exit_code
    sys.exit(code)


if __name__ == "__main__":
    main()

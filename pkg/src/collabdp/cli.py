"""Command-line entry point: ``collabdp {run,sweep,check-bounds,privacy-audit,datasets}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from .bound_checks import check_strongly_convex_average, check_adaptive_distance_slope
from .data import DATASET_SOURCES, default_data_dir
from .harness import ExperimentConfig, audit_ledger, load_config, run_experiment, sweep

log = logging.getLogger("collabdp")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.out:
        changes["out_dir"] = args.out
    if args.seeds:
        changes["seeds"] = _int_list(args.seeds)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _resolve(args)
    rows = run_experiment(cfg, threads=args.threads)
    for r in rows:
        print(f"seed={r['seed']} eps={r['epsilon'] or '-'} acc={float(r['test_accuracy']):.4f}")
    print(f"wrote {Path(cfg.out_dir) / 'results.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    values = _float_list(args.values) if args.axis == "epsilon" else _int_list(args.values)
    _, summary = sweep(cfg, args.axis, values, threads=args.threads)
    for s in summary:
        print(f"{s['axis']}={s['value']} median={float(s['median_accuracy']):.4f} "
              f"iqr={float(s['iqr']):.4f} runs={s['runs']}")
    print(f"wrote {Path(cfg.out_dir) / 'sweep.csv'}")
    return 0


def cmd_check_bounds(args) -> int:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    seeds = _int_list(args.seeds) if args.seeds else None
    kw4 = {"seeds": seeds} if seeds else {}
    kw7 = {"seeds": seeds} if seeds else {}
    failed = False
    with open(out / "bounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "epsilon", "b", "T", "measured", "bound", "ok"])
        for p in check_strongly_convex_average(**kw4):
            writer.writerow(["strongly_convex_average", p.epsilon, p.b, p.T,
                             repr(p.measured), repr(p.bound), p.ok])
            print(f"avg-iterate eps={p.epsilon} b={p.b}: {p.measured:.4g} <= {p.bound:.4g} "
                  f"{'ok' if p.ok else 'VIOLATED'}")
            failed |= not p.ok
        if not args.skip_slope:
            s = check_adaptive_distance_slope(**kw7)
            writer.writerow(["adaptive_distance_slope", "", "", len(s.ts), repr(s.slope),
                             "[-1.3,-0.7]", s.ok()])
            print(f"distance slope {s.slope:.3f} in [-1.3, -0.7]: {'ok' if s.ok() else 'VIOLATED'}")
            failed |= not s.ok()
    print(f"wrote {out / 'bounds.csv'}")
    return 1 if failed else 0


def cmd_privacy_audit(args) -> int:
    path = Path(args.ledger or Path(args.out or "out") / "ledger.json")
    if not path.exists():
        print(f"no ledger at {path}", file=sys.stderr)
        return 2
    problems = audit_ledger(path)
    for p in problems:
        print(p)
    print(f"{path}: {'clean' if not problems else f'{len(problems)} problem(s)'}")
    return 1 if problems else 0


def cmd_datasets(args) -> int:
    target = args.data_dir or default_data_dir()
    print(f"place files under {target} (or set COLLABDP_DATA); nothing is downloaded")
    names = [args.name] if args.name else list(DATASET_SOURCES)
    for name in names:
        info = DATASET_SOURCES[name]
        print(f"[{name}]")
        for k, v in info.items():
            print(f"  {k}: {v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collabdp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file with [section] headers")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("run", help="train and evaluate every (seed, epsilon) cell")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="vary epsilon, batch size or node count")
    common(p)
    p.add_argument("--axis", required=True, choices=["epsilon", "batch", "nodes"])
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-bounds", help="compare synthetic runs against the bounds")
    p.add_argument("--out")
    p.add_argument("--seeds")
    p.add_argument("--skip-slope", action="store_true", help="only run the average-iterate check")
    p.set_defaults(func=cmd_check_bounds)

    p = sub.add_parser("privacy-audit", help="re-validate a ledger.json")
    p.add_argument("--out", help="directory holding ledger.json")
    p.add_argument("--ledger", help="explicit ledger path")
    p.set_defaults(func=cmd_privacy_audit)

    p = sub.add_parser("datasets", help="dataset helpers")
    dsub = p.add_subparsers(dest="action", required=True)
    f = dsub.add_parser("fetch", help="print source URLs and expected layout")
    f.add_argument("name", nargs="?", choices=sorted(DATASET_SOURCES))
    f.add_argument("--data-dir")
    f.set_defaults(func=cmd_datasets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

Subcommands: generate-synth, train, audit, compare, shuffle-control,
report.  Exit codes: 0 success, 2 config error, 3 data error, 4 protocol
violation, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .audit import compare, proxy_shuffle_control, run_suite
from .config import load_config, parse_seed_range
from .errors import AcgateError
from .report import (emit_report, emit_shuffle_report, load_report,
                     write_report_json)
from .synth import generate, write_csv


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seeds", default=None,
                   help="seed range 'a..b' or list 'a,b,c' (overrides config)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel seed workers")


def _apply_overrides(cfg, args) -> None:
    if getattr(args, "seeds", None):
        cfg.audit.seeds = parse_seed_range(args.seeds)
    if getattr(args, "model", None):
        cfg.audit.roster = [args.model]
        cfg.audit.reference = args.model
    cfg.validate()


def cmd_generate_synth(args) -> int:
    cfg = load_config(args.config)
    if cfg.dataset.kind != "synthetic":
        from .errors import ConfigError
        raise ConfigError("generate-synth needs a synthetic dataset config")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sp = generate(cfg.dataset.dgp)
    panel_path = out / "panel.csv"
    truth_path = out / "truth.csv"
    write_csv(sp, panel_path, truth_path)
    print(f"wrote {panel_path} and {truth_path}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    out = Path(args.out)
    report = run_suite(cfg, jobs=args.jobs, checkpoint_dir=str(out / "checkpoints"))
    emit_report(report, out)
    print(f"trained {cfg.audit.roster} on seeds {cfg.audit.seeds}; "
          f"checkpoints in {out / 'checkpoints'}")
    return 0


def cmd_audit(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    report = run_suite(cfg, jobs=args.jobs, checkpoint_dir=args.checkpoints)
    paths = emit_report(report, args.out)
    v = report["verdict"]
    print(f"verdict {v['domain']}: L0={v['l0']} L1={v['l1']} "
          f"L2={v['l2']} L3={v['l3']}")
    print(f"wrote {len(paths)} files under {args.out}")
    return 0


def cmd_compare(args) -> int:
    base = load_report(args.base)
    other = args.other
    if other.endswith(".json"):
        other = load_report(other)
    rows = compare(base, other, args.metric)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .report import _write_csv
    path = out / f"compare_{args.metric}.csv"
    _write_csv(path, ["metric", "reference", "method", "n", "mean_diff",
                      "median_diff", "w", "p_value", "note"],
               [[r["metric"], r["reference"], r["method"], r["n"],
                 r.get("mean_diff"), r.get("median_diff"), r.get("w"),
                 r.get("p_value"), r.get("note", "")] for r in rows])
    for r in rows:
        p = r.get("p_value")
        print(f"{r['method']:>16s} vs {r['reference']}: "
              f"mean diff {r.get('mean_diff'):+.4f}  "
              f"W={r.get('w')}  p={p if p is not None else 'n/a'}"
              f"  {r.get('note', '')}")
    print(f"wrote {path}")
    return 0


def cmd_shuffle_control(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    control = proxy_shuffle_control(cfg, jobs=args.jobs)
    emit_shuffle_report(control, args.out)
    d = control["drop"]
    print(f"mean |rho|: {d['mean_abs_rho_base']} -> "
          f"{d['mean_abs_rho_shuffled']}  reject share: "
          f"{d['reject_share_base']} -> {d['reject_share_shuffled']}  "
          f"task loss rel change: {d['task_loss_rel_change']}")
    return 0


def cmd_report(args) -> int:
    report = load_report(args.input)
    paths = emit_report(report, args.out)
    print(f"re-emitted {len(paths)} files under {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acgate",
        description="entity-conditioned lag-gated forecaster and lag audit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-synth",
                       help="write a synthetic panel CSV plus truth CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_generate_synth)

    p = sub.add_parser("train", help="train models and save checkpoints")
    _add_common(p)
    p.add_argument("--model", default=None, help="single model override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("audit", help="run the full layered audit")
    _add_common(p)
    p.add_argument("--model", default=None, help="single model override")
    p.add_argument("--checkpoints", default=None,
                   help="directory of saved checkpoints to reload")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("compare",
                       help="paired seed-level tests between reports")
    p.add_argument("--base", required=True, help="base report.json")
    p.add_argument("--other", required=True,
                   help="second report.json or external metrics CSV")
    p.add_argument("--metric", required=True)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("shuffle-control",
                       help="proxy-shuffle negative control (retrains)")
    _add_common(p)
    p.add_argument("--model", default=None, help="reference model override")
    p.set_defaults(func=cmd_shuffle_control)

    p = sub.add_parser("report", help="re-emit CSV tables from a report")
    p.add_argument("--input", required=True, help="report.json path")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AcgateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

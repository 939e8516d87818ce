"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import os
import sys

from . import autodiff as ad
from . import verify
from .experiments import (
    ConfigError,
    ExperimentConfig,
    build_data,
    build_model,
    features,
    linear_probe,
    load_checkpoint,
    run_nonequivariant_control,
    sweep_base_size,
    sweep_topo_distance,
    train,
    write_metrics,
    write_sweep,
)
from .nets import FAMILIES

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _common(zero_pad=False, trials=None, group_required=False) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--precision", choices=("f32", "f64"), help="numeric precision")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--group", choices=FAMILIES, required=group_required, help="group family")
    p.add_argument("--csv", action="store_true", help="print CSV to stdout")
    if zero_pad:
        p.add_argument("--zero-pad", action="store_true", help=argparse.SUPPRESS)
    if trials is not None:
        p.add_argument("--trials", type=int, default=trials, help=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homossl", description="Equivariant contrastive learning on finite groups.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    sub.add_parser("verify-groups", parents=[_common()],
                   help="group axioms and regular-representation homomorphism")
    sub.add_parser("verify-equivariance", parents=[_common(True, 100, True)],
                   help="exhaustive equivariance of random backbones")
    sub.add_parser("verify-equivalence", parents=[_common(True, 50, True)],
                   help="matched-sample A-SSL vs H-SSL loss and fiber identity")
    sub.add_parser("verify-gradients", parents=[_common(trials=20)],
                   help="tape gradients vs central finite differences")
    sub.add_parser("train", parents=[_common()], help="train one configuration")
    sub.add_parser("probe", parents=[_common()],
                   help="linear probe on a trained checkpoint (or the untrained backbone)")
    sub.add_parser("control", parents=[_common()],
                   help="H-SSL on a non-equivariant backbone with emulated fibers")
    sw = sub.add_parser("sweep", parents=[_common()], help="base-size or distance sweep")
    sw.add_argument("--kind", choices=("base_size", "topo_distance"), required=True)
    sw.add_argument("--values", required=True, help="comma-separated settings")
    sub.add_parser("emit-report", parents=[_common()], help="aggregate runs under --out")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.precision:
        changes["precision"] = args.precision
    if args.out:
        changes["out"] = args.out
    if args.group:
        changes["backbone"] = {"family": args.group}
    return cfg.replace(**changes) if changes else cfg


def cmd_verify_groups(args) -> int:
    res = verify.verify_groups()
    for r in res["groups"]:
        ok = all(v for v in r.values() if isinstance(v, bool))
        print(f"{'PASS' if ok else 'FAIL'} {r['group']} (order {r['order']}): "
              + " ".join(f"{k}={v}" for k, v in r.items() if isinstance(v, bool)))
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_verify_equivariance(args) -> int:
    res = verify.verify_equivariance(args.group, args.trials, args.precision or "f64",
                                     "zero" if args.zero_pad else "circular", args.seed or 0)
    print(f"{'PASS' if res['passed'] else 'FAIL'} {res['family']} padding={res['padding']} "
          f"precision={res['precision']} trials={res['trials']} "
          f"max_error={res['max_error']:.3e} tolerance={res['tolerance']:.0e}")
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_verify_equivalence(args) -> int:
    res = verify.verify_equivalence(args.group, args.trials, args.precision or "f64",
                                    "zero" if args.zero_pad else "circular", args.seed or 0)
    print(f"{'PASS' if res['passed'] else 'FAIL'} {res['family']} padding={res['padding']} "
          f"precision={res['precision']} trials={res['trials']}")
    print(f"  max |dL| = {res['max_loss_delta']:.3e}")
    print(f"  max fiber deviation = {res['max_fiber_deviation']:.3e}")
    print(f"  tolerance = {res['tolerance']:.0e}")
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_verify_gradients(args) -> int:
    base = args.seed or 1
    res = verify.verify_gradients(seeds=range(base, base + args.trials))
    for loss in ("assl", "hssl", "fsim", "supervised"):
        errs = [r["rel_error"] for r in res["rows"] if r["loss"] == loss]
        print(f"  {loss}: max relative error {max(errs):.3e} over {len(errs)} seeds")
    for n, v in res["closed_form"].items():
        print(f"  uniform-similarity loss N={n}: {v:.12f}")
    print(f"{'PASS' if res['passed'] else 'FAIL'} max relative error "
          f"{res['max_rel_error']:.3e} tolerance {res['tolerance']:.0e}")
    return EXIT_OK if res["passed"] else EXIT_FAIL


def _emit_metrics(result, as_csv):
    if as_csv:
        write_metrics(sys.stdout, result.metrics)
        return
    for m in result.metrics:
        print(f"  epoch {m.epoch}: loss={m.loss_value:.4f} probe={m.probe_accuracy:.4f} "
              f"equivariance_error={m.equivariance_error:.2e}")


def cmd_train(args) -> int:
    cfg = _config(args)
    result = train(cfg)
    if not args.csv:
        print(f"run {cfg.run_hash} -> {result.out_dir}")
    _emit_metrics(result, args.csv)
    if not args.csv:
        print(f"final probe accuracy {result.accuracy:.4f}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = _config(args)
    train_set, test_set = build_data(cfg)
    with ad.precision(cfg.precision):
        model = build_model(cfg, max(train_set.num_classes, 2))
        manifest = os.path.join(cfg.run_dir, "manifest.json")
        source = "untrained initialization"
        if os.path.exists(manifest):
            load_checkpoint(cfg.run_dir, model)
            source = f"checkpoint {cfg.run_dir}"
        acc = linear_probe(features(model, train_set.images), train_set.labels,
                           features(model, test_set.images), test_set.labels, cfg.probe)
    if args.csv:
        print("run_hash,source,probe_accuracy")
        print(f"{cfg.run_hash},{source},{acc!r}")
    else:
        print(f"probe accuracy {acc:.4f} ({source})")
    return EXIT_OK


def cmd_control(args) -> int:
    cfg = _config(args)
    acc = run_nonequivariant_control(cfg)
    if args.csv:
        print("run_hash,probe_accuracy")
        print(f"{cfg.replace(loss='hssl', backbone={'equivariant': False}).run_hash},{acc!r}")
    else:
        print(f"non-equivariant control probe accuracy {acc:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    try:
        values = [float(v) if args.kind == "topo_distance" else int(v)
                  for v in args.values.split(",") if v.strip()]
    except ValueError:
        print(f"error: bad --values {args.values!r}", file=sys.stderr)
        return EXIT_USAGE
    fn = sweep_base_size if args.kind == "base_size" else sweep_topo_distance
    try:
        rows = fn(cfg, values)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.csv:
        write_sweep(sys.stdout, rows)
    else:
        for r in rows:
            print(f"  {args.kind}={r['setting']}: accuracy={r['accuracy']:.4f} "
                  f"change={r['pct_change_vs_first']:+.1f}%")
    return EXIT_OK


def cmd_emit_report(args) -> int:
    from .report import emit_report
    out = args.out or ExperimentConfig().out
    if not os.path.isdir(out):
        print(f"error: output directory {out} does not exist", file=sys.stderr)
        return EXIT_USAGE
    markdown, text = emit_report(out)
    sys.stdout.write(text if args.csv else markdown)
    return EXIT_OK


COMMANDS = {
    "verify-groups": cmd_verify_groups,
    "verify-equivariance": cmd_verify_equivariance,
    "verify-equivalence": cmd_verify_equivalence,
    "verify-gradients": cmd_verify_gradients,
    "train": cmd_train,
    "probe": cmd_probe,
    "control": cmd_control,
    "sweep": cmd_sweep,
    "emit-report": cmd_emit_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)      # exits with status 2 on usage errors
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

Subcommands: gen-data (synthetic dataset), train (one strategy), bench
(strategy comparison), ablate (switch grid), doc (conflict analysis of a
checkpoint). Flags mirror the experiment config; a `key = value` config file
can override defaults, and explicit flags override the file.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import load_checkpoint
from .conflict import (
    degree_of_conflict,
    mean_pairwise_similarity,
    optimal_doc,
    save_similarity_csv,
    similarity_matrix,
)
from .harness import ExperimentConfig, InvariantError, run_ablation, run_experiment
from .report import emit_report
from .signals import make_dataset, save_dataset, write_manifest

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    if kind is bool or kind == "bool":
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ValueError(f"{name}: cannot parse boolean from {raw!r}")
    if name == "strategies":
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


_FIELD_TYPES = {"devices": int, "initial_classes": int, "increment": int, "stages": int,
                "samples_per_device": int, "snr_db": float, "strategies": tuple,
                "stage0_epochs": int, "il_epochs": int, "batch_size": int,
                "learning_rate": float, "momentum": float, "l2_factor": float,
                "temperature": float, "cs_on": bool, "kd_on": bool, "ewc_on": bool,
                "extractor": str, "hidden_dim": int, "feature_dim": int, "seed": int,
                "dataset_path": str, "strict": bool}


def read_config_file(path) -> dict:
    """Parse `key = value` lines; blank lines and # comments are ignored."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, _FIELD_TYPES[key], raw)
    return values


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "strict":
            parser.add_argument(flag, action="store_const", const=True, default=None,
                                help="fail (exit 2) on any violated run invariant")
        elif _FIELD_TYPES[f.name] is bool:
            parser.add_argument(flag, default=None, metavar="BOOL")
        elif f.name == "strategies":
            parser.add_argument(flag, default=None, help="comma-separated strategy tags")
        else:
            parser.add_argument(flag, default=None)


def build_config(args: argparse.Namespace, **forced) -> ExperimentConfig:
    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(ExperimentConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            values[f.name] = raw if not isinstance(raw, str) \
                else _coerce(f.name, _FIELD_TYPES[f.name], raw)
    values.update(forced)
    cfg = ExperimentConfig.from_dict(values)
    cfg.validate()
    return cfg


def _cmd_gen_data(args) -> int:
    ds = make_dataset(int(args.devices), int(args.samples), float(args.snr_db),
                      int(args.seed), drift_scale=float(args.drift_scale))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    write_manifest(ds, out.with_suffix(out.suffix + ".manifest.csv"))
    print(f"wrote {ds.n_samples} samples from {ds.n_devices} devices to {out}")
    return 0


def _run_and_emit(cfg: ExperimentConfig, outdir, fmt: str, save_checkpoints: bool) -> int:
    try:
        report = run_experiment(cfg, outdir=outdir, save_checkpoints=save_checkpoints)
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2
    for f in ({"json", "csv"} if fmt == "both" else {fmt}):
        for path in emit_report(report, f, outdir):
            print(f"wrote {path}")
    for name in report.strategies:
        final = report.final_metrics(name)
        print(f"{name}: final avg {final.acc_avg:.2f}% | new "
              f"{final.acc_new:.2f}% | conflict {final.doc_all:.3f} | "
              f"forget/stage {report.forgetting_per_stage(name):.3f}")
    return 0


def _cmd_train(args) -> int:
    cfg = build_config(args, strategies=(args.strategy,))
    return _run_and_emit(cfg, args.out, args.format, save_checkpoints=True)


def _cmd_bench(args) -> int:
    cfg = build_config(args)
    return _run_and_emit(cfg, args.out, args.format,
                         save_checkpoints=args.save_checkpoints)


def _cmd_ablate(args) -> int:
    cfg = build_config(args)
    try:
        reports = run_ablation(cfg, outdir=args.out)
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2
    print(f"{'row':<8} {'final avg %':>12} {'new %':>8} {'forget/stage':>13}")
    for row, report in reports.items():
        name = next(iter(report.strategies))
        final = report.final_metrics(name)
        print(f"{row:<8} {final.acc_avg:>12.2f} {final.acc_new:>8.2f} "
              f"{report.forgetting_per_stage(name):>13.3f}")
    return 0


def _cmd_doc(args) -> int:
    model, ctx, _ = load_checkpoint(args.checkpoint)
    fp = model.head.fingerprint_matrix()
    n = fp.shape[0]
    doc = degree_of_conflict(fp)
    print(f"classes: {n}")
    print(f"degree of conflict: {doc:.6f} (optimum {optimal_doc(n):.2f})")
    pairs = n * (n - 1) / 2
    print(f"mean pairwise similarity: {doc / pairs:.6f} "
          f"(optimum {mean_pairwise_similarity(n):.6f})")
    if ctx is not None and len(ctx.channel_map) > 1:
        for span in ctx.channel_map:
            lo, hi = span.classes
            if hi - lo >= 2:
                print(f"  stage {span.stage} classes [{lo},{hi}): "
                      f"conflict {degree_of_conflict(fp[lo:hi]):.6f}")
    if args.out_csv:
        save_similarity_csv(similarity_matrix(fp), args.out_csv)
        print(f"wrote {args.out_csv}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="csil",
                                     description="incremental wireless-fingerprint learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset container")
    p.add_argument("--devices", default=20)
    p.add_argument("--samples", default=200, help="samples per device")
    p.add_argument("--snr-db", default=20.0)
    p.add_argument("--drift-scale", default=0.01)
    p.add_argument("--seed", default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run one strategy over the staged schedule")
    _add_config_flags(p)
    p.add_argument("--strategy", default="csil")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="both", choices=["csv", "json", "both"])
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("bench", help="compare strategies on one seed")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="both", choices=["csv", "json", "both"])
    p.add_argument("--save-checkpoints", action="store_true")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("ablate", help="run the full/no-CS/no-EWC/no-KD grid")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("doc", help="conflict analysis of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=_cmd_doc)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

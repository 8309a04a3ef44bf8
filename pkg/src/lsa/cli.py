"""Command-line surface: dataset analysis, synthetic generation, training,
evaluation, sweeps, and trajectory export.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Stdout stays human-readable; machine-readable artifacts go to files under
--out (default: $LSA_OUTPUT_ROOT, falling back to the working directory).
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (
    DataError,
    SynthSpec,
    cluster_histogram,
    dataset_to_json,
    generate_synthetic_corpus,
    load_dataset,
)
from .distance import load_parses
from .encoder import ConfigError
from .runio import build_manifest, load_manifest, verify_manifest_hashes, write_csv, write_manifest
from .training import (
    NumericError,
    TrainConfig,
    _coerce_config_values,
    evaluate,
    seed_sweep,
    static_eta_sweep,
    train,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _output_root() -> Path:
    return Path(os.environ.get("LSA_OUTPUT_ROOT", "."))


def _out_dir(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else _output_root() / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


_CONFIG_FLAG_TYPES = {"int": int, "float": float, "str": str}


def _add_config_flags(parser) -> None:
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, action="store_true", default=None)
        elif f.name == "frozen_eta":
            parser.add_argument(flag, default=None, metavar="L,R")
        else:
            base = f.type.split(" ")[0]
            parser.add_argument(
                flag, type=_CONFIG_FLAG_TYPES.get(base, str), default=None
            )


def _config_from_args(args) -> TrainConfig:
    """Config file values, overridden by any explicitly passed flags."""
    if args.config:
        config = TrainConfig.from_file(args.config)
    else:
        config = TrainConfig()
    overrides = {}
    for f in fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is None:
            continue
        overrides[f.name] = str(value)
    merged = config.to_dict()
    merged.update(_coerce_config_values(overrides))
    return TrainConfig.from_dict(merged)


# ---------------------------------------------------------------------------
# Command implementations (shared by direct invocation and replay)


def run_analyze_clusters(dataset_path, format, out_dir) -> None:
    dataset = load_dataset(dataset_path, format)
    hist = cluster_histogram(dataset)
    print(f"{dataset_path}: {len(dataset.examples)} examples, "
          f"{dataset.aspect_count()} aspects")
    for size in (1, 2, 3, 4, 5):
        label = "5+" if size == 5 else str(size)
        print(f"  cluster size {label:>2}: {hist.counts[size]} aspects")
    print(f"  total: {hist.total}")
    csv_path = Path(out_dir) / "clusters.csv"
    csv_path.write_text(hist.as_csv(), encoding="utf-8")
    manifest = build_manifest(
        "analyze-clusters",
        {"dataset": str(dataset_path), "format": format},
        [str(dataset_path)],
    )
    write_manifest(manifest, out_dir)
    print(f"wrote {csv_path}")


def run_synth(spec_path, seed, out_dir) -> None:
    spec = SynthSpec.from_file(spec_path)
    datasets = generate_synthetic_corpus(spec, seed)
    for split, dataset in sorted(datasets.items()):
        path = Path(out_dir) / f"{split}.json"
        path.write_text(dataset_to_json(dataset), encoding="utf-8")
        print(f"wrote {path} ({len(dataset.examples)} examples, "
              f"{dataset.aspect_count()} aspects)")
    manifest = build_manifest(
        "synth", {"spec": str(spec_path), "seed": seed}, [str(spec_path)]
    )
    write_manifest(manifest, out_dir)


def run_train(config: TrainConfig, out_dir) -> None:
    result = train(config)
    write_csv(
        Path(out_dir) / "metrics.csv",
        ["epoch", "split", "acc", "macro_f1"],
        result.metrics_rows,
    )
    write_csv(
        Path(out_dir) / "eta_trajectory.csv",
        ["step", "eta_l", "eta_r"],
        result.trajectory,
    )
    save_checkpoint(result.model, Path(out_dir) / "checkpoint.bin")
    manifest = build_manifest(
        "train",
        config.to_dict(),
        [config.train_path, config.valid_path, config.test_path, config.parse_path],
    )
    write_manifest(manifest, out_dir)
    print(f"trained {config.variant} for {config.epochs} epochs "
          f"(best epoch {result.best_epoch})")
    if result.final_metrics:
        m = result.final_metrics
        print(f"final: acc {m.accuracy:.4f}, macro-F1 {m.macro_f1:.4f} "
              f"({m.n_examples} pairs)")
    print(f"artifacts in {out_dir}")


def run_eval(checkpoint, dataset_path, format, slice_, parses, out_dir) -> None:
    model = load_checkpoint(checkpoint)
    dataset = load_dataset(dataset_path, format)
    trees = load_parses(parses) if parses else None
    metrics = evaluate(model, dataset, trees, slice_)
    label = slice_ or "all"
    print(f"{dataset_path} [{label}]: acc {metrics.accuracy:.4f}, "
          f"macro-F1 {metrics.macro_f1:.4f} over {metrics.n_examples} pairs")
    for pol, cs in zip(("positive", "negative", "neutral"), metrics.per_class):
        print(f"  {pol:>8}: precision {cs.precision:.4f}, recall {cs.recall:.4f}, "
              f"F1 {cs.f1:.4f}")
    write_csv(
        Path(out_dir) / "eval.csv",
        ["slice", "acc", "macro_f1", "n"],
        [(label, metrics.accuracy, metrics.macro_f1, metrics.n_examples)],
    )
    manifest = build_manifest(
        "eval",
        {
            "checkpoint": str(checkpoint),
            "dataset": str(dataset_path),
            "format": format,
            "slice": slice_,
            "parses": str(parses) if parses else None,
        },
        [str(dataset_path)],
    )
    write_manifest(manifest, out_dir)


def _parse_grid(spec: str) -> list[float]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError("grid must be start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise UsageError("grid must have positive step and stop >= start")
    count = int(round((stop - start) / step)) + 1
    return [start + i * step for i in range(count)]


def run_sweep_eta(config: TrainConfig, grid: str, out_dir) -> None:
    rows = static_eta_sweep(config, _parse_grid(grid))
    write_csv(
        Path(out_dir) / "sweep_eta.csv",
        ["eta_l", "eta_r", "acc", "macro_f1"],
        rows,
    )
    manifest = build_manifest(
        "sweep-eta",
        {"config": config.to_dict(), "grid": grid},
        [config.train_path, config.valid_path, config.test_path],
    )
    write_manifest(manifest, out_dir)
    for eta_l, eta_r, acc, f1 in rows:
        print(f"eta_l {eta_l:.2f} eta_r {eta_r:.2f}: acc {acc:.4f}, macro-F1 {f1:.4f}")


def run_sweep_seeds(config: TrainConfig, seeds: str, out_dir) -> None:
    seed_list = [int(s) for s in seeds.split(",") if s.strip() != ""]
    summary = seed_sweep(config, seed_list)
    rows = [(str(s), acc, f1) for s, acc, f1 in summary.rows]
    rows.append(("median", summary.median_acc, summary.median_f1))
    rows.append(("iqr", summary.iqr_acc, summary.iqr_f1))
    write_csv(Path(out_dir) / "sweep_seeds.csv", ["seed", "acc", "macro_f1"], rows)
    manifest = build_manifest(
        "sweep-seeds",
        {"config": config.to_dict(), "seeds": seeds},
        [config.train_path, config.valid_path, config.test_path],
    )
    write_manifest(manifest, out_dir)
    print(f"median acc {summary.median_acc:.4f} (IQR {summary.iqr_acc:.4f}), "
          f"median macro-F1 {summary.median_f1:.4f} (IQR {summary.iqr_f1:.4f})")


def run_export_trajectory(run_dir, out_file) -> None:
    src = Path(run_dir) / "eta_trajectory.csv"
    if not src.exists():
        raise DataError(f"no eta_trajectory.csv under {run_dir}")
    header = src.read_text(encoding="utf-8").splitlines()[0]
    if header != "step,eta_l,eta_r":
        raise DataError(f"{src}: unexpected trajectory header {header!r}")
    shutil.copyfile(src, out_file)
    print(f"exported {src} -> {out_file}")


def run_replay(manifest_path, out_dir) -> None:
    manifest = load_manifest(manifest_path)
    verify_manifest_hashes(manifest)
    command, args = manifest["command"], manifest["args"]
    print(f"replaying {command} from {manifest_path}")
    if command == "train":
        run_train(TrainConfig.from_dict(args), out_dir)
    elif command == "analyze-clusters":
        run_analyze_clusters(args["dataset"], args["format"], out_dir)
    elif command == "synth":
        run_synth(args["spec"], args["seed"], out_dir)
    elif command == "eval":
        run_eval(
            args["checkpoint"], args["dataset"], args["format"],
            args["slice"], args["parses"], out_dir,
        )
    elif command == "sweep-eta":
        run_sweep_eta(TrainConfig.from_dict(args["config"]), args["grid"], out_dir)
    elif command == "sweep-seeds":
        run_sweep_seeds(TrainConfig.from_dict(args["config"]), args["seeds"], out_dir)
    else:
        raise DataError(f"manifest command {command!r} cannot be replayed")


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="lsa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-clusters", help="sentiment cluster histogram")
    p.add_argument("dataset")
    p.add_argument("--format", choices=["absa-json", "semeval-xml"], default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)

    for name in ("train", "sweep-eta", "sweep-seeds"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        _add_config_flags(p)
        if name == "sweep-eta":
            p.add_argument("--grid", default="0:1:0.1")
        if name == "sweep-seeds":
            p.add_argument("--seeds", default="0,1,2,3,4")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", choices=["absa-json", "semeval-xml"], default=None)
    p.add_argument("--slice", default=None,
                   help="implicit | explicit | mono | cluster1..cluster4 | cluster5+")
    p.add_argument("--parses", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("export-trajectory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "analyze-clusters":
            run_analyze_clusters(args.dataset, args.format, _out_dir(args, "clusters"))
        elif args.command == "synth":
            run_synth(args.spec, args.seed, _out_dir(args, "synth"))
        elif args.command == "train":
            run_train(_config_from_args(args), _out_dir(args, "train"))
        elif args.command == "eval":
            run_eval(
                args.checkpoint, args.dataset, args.format, args.slice,
                args.parses, _out_dir(args, "eval"),
            )
        elif args.command == "sweep-eta":
            run_sweep_eta(_config_from_args(args), args.grid, _out_dir(args, "sweep-eta"))
        elif args.command == "sweep-seeds":
            run_sweep_seeds(
                _config_from_args(args), args.seeds, _out_dir(args, "sweep-seeds")
            )
        elif args.command == "export-trajectory":
            run_export_trajectory(args.run, args.out)
        elif args.command == "replay":
            run_replay(args.manifest, _out_dir(args, "replay"))
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

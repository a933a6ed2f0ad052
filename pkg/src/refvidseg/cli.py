"""Command-line entry point.

Subcommands: train, eval, infer, synth, stats, validate.
Exit codes: 0 success, 2 validation/configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, build_config, config_to_dict
from .data.ops import dataset_stats, split_endovis
from .data.schema import DatasetError, load_dataset
from .data.synthetic import GenerationError, SyntheticConfig, generate_synthetic

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _common_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="run-config file (JSON or YAML)")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--grm", choices=["on", "off"], help="toggle the relation module")
    parser.add_argument(
        "--instrument-branch", choices=["on", "off"], help="toggle the object-level branch"
    )
    parser.add_argument(
        "--graph-propagation",
        choices=["on", "off"],
        help="toggle graph message passing inside the relation module",
    )
    parser.add_argument("--deterministic", action="store_true", help="force deterministic mode")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="generic config override, repeatable",
    )


def _config_from_args(args) -> RunConfig:
    sets = list(args.set)
    if args.seed is not None:
        sets.append(f"seed={args.seed}")
    if args.out is not None:
        sets.append(f'out_dir="{args.out}"')
    if args.grm is not None:
        sets.append(f"grm.enabled={'true' if args.grm == 'on' else 'false'}")
    if args.instrument_branch is not None:
        sets.append(
            f"instrument_branch.enabled={'true' if args.instrument_branch == 'on' else 'false'}"
        )
    if args.graph_propagation is not None:
        sets.append(
            "grm.graph_propagation_enabled="
            + ("true" if args.graph_propagation == "on" else "false")
        )
    if args.deterministic:
        sets.append("deterministic=true")
    return build_config(args.config, sets)


def _load_split(config: RunConfig, split: str):
    index = load_dataset(config.data.root)
    name = config.data.dataset_name.lower()
    if any(name.endswith(k) for k in ("rs17", "rs18")):
        train_index, val_index = split_endovis(index, name)
    else:
        train_index, val_index = index, index
    if split == "train":
        return train_index
    if split == "val":
        return val_index
    if split == "all":
        return index
    raise DatasetError(f"unknown split name '{split}' (expected train, val or all)")


def cmd_train(args) -> int:
    from .train.loop import fit

    config = _config_from_args(args)
    train_index = _load_split(config, "train")
    val_index = None
    if args.val_root:
        val_index = load_dataset(args.val_root, split_tag="val")
    elif config.data.dataset_name.lower().endswith(("rs17", "rs18")):
        val_index = _load_split(config, "val")

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"
    )
    result = fit(train_index, config, val_index=val_index, log_fn=print)
    (out_dir / "metric_log.json").write_text(json.dumps(result.metric_log, indent=2) + "\n")
    print(f"wrote {len(result.checkpoints)} checkpoint(s) under {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import EmptyPredictor, OraclePredictor, evaluate_model, format_table_row, save_report
    from .train.loop import load_checkpoint

    if args.predictor == "model":
        model, config, _, _ = load_checkpoint(args.checkpoint)
        predictor = model
    else:
        config = _config_from_args(args)
        predictor = OraclePredictor() if args.predictor == "oracle" else EmptyPredictor()
    if args.root:
        config.data.root = args.root
    index = _load_split(config, args.split)
    report, results = evaluate_model(predictor, index, config)
    out = Path(args.out or config.out_dir)
    report_path = out / "eval_report.json"
    save_report(report_path, report, results, config)
    print(format_table_row(args.predictor, report))
    print(f"report written to {report_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .predict import run_inference
    from .train.loop import load_checkpoint

    if not args.expression.strip():
        raise ConfigError("expression must be nonempty")
    model, config, _, _ = load_checkpoint(args.checkpoint)
    written = run_inference(model, config, args.frames_dir, args.expression, args.out)
    print(f"wrote {len(written)} mask(s) + overlay(s) under {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        seed=args.seed,
        num_clips=args.clips,
        frames_per_clip=args.frames,
        canvas=(args.height, args.width),
        objects_per_clip=(args.min_objects, args.max_objects),
        same_type_fraction=args.same_type_fraction,
    )
    index = generate_synthetic(cfg, args.out)
    print(f"generated {len(index.videos)} clips, {len(index.samples)} samples under {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    index = load_dataset(args.root)
    report = dataset_stats(index)
    print(f"{report.pair_count} pairs")
    print(f"word minimum: {report.word_min}")
    print(f"word maximum: {report.word_max}")
    top = sorted(report.word_freq.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
    for word, count in top:
        print(f"  {word:<16} {count}")
    return EXIT_OK


def cmd_validate(args) -> int:
    index = load_dataset(args.root)
    print(f"OK: {len(index.videos)} video(s), {len(index.samples)} sample(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refvidseg", description="Referring video instrument segmentation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a run config")
    _common_config_flags(p_train)
    p_train.add_argument("--val-root", help="held-out dataset root for validation")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _common_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint file (required for --predictor model)")
    p_eval.add_argument("--root", help="dataset root (defaults to the config's data.root)")
    p_eval.add_argument("--split", default="val", help="train | val | all")
    p_eval.add_argument(
        "--predictor",
        default="model",
        choices=["model", "oracle", "empty"],
        help="oracle/empty are metric-pipeline debug bounds",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_infer = sub.add_parser("infer", help="segment the referred object in a frame directory")
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--frames-dir", required=True)
    p_infer.add_argument("--expression", required=True)
    p_infer.add_argument("--out", required=True)
    p_infer.set_defaults(func=cmd_infer)

    p_synth = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--clips", type=int, default=10)
    p_synth.add_argument("--frames", type=int, default=3)
    p_synth.add_argument("--height", type=int, default=64)
    p_synth.add_argument("--width", type=int, default=96)
    p_synth.add_argument("--min-objects", type=int, default=2)
    p_synth.add_argument("--max-objects", type=int, default=4)
    p_synth.add_argument("--same-type-fraction", type=float, default=0.5)
    p_synth.set_defaults(func=cmd_synth)

    p_stats = sub.add_parser("stats", help="corpus statistics for a dataset root")
    p_stats.add_argument("root")
    p_stats.set_defaults(func=cmd_stats)

    p_validate = sub.add_parser("validate", help="validate a manifest")
    p_validate.add_argument("root")
    p_validate.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, GenerationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

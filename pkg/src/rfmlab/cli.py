"""Command-line surface: gen-data, train, eval, ablate, visualize, erase-preview.

Flags override config-file keys; every run requires a seed.  On failure the
tool prints a single machine-parsable line '<category>: <message>' to
stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .data import write_dataset
from .detector import Detector, load_checkpoint
from .errors import ConfigError, RfmLabError
from .harness import (
    ExperimentConfig,
    build_datasets,
    config_from_dict,
    derive_rng,
    run_ablation,
    run_evaluation,
    run_training,
    _merge_dicts,
)
from .visualize import erase_preview, run_visualization

log = logging.getLogger("rfmlab")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--checkpoint", help="checkpoint file path")
    parser.add_argument("--data", help="dataset directory holding train/ and test/")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. train.iterations=100")


def _parse_overrides(pairs: list[str]) -> dict:
    out: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, raw_value = pair.split("=", 1)
        value = yaml.safe_load(raw_value)
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _load_raw_config(args) -> dict:
    raw: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    raw = _merge_dicts(raw, _parse_overrides(args.set))
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    return raw


def _build_config(args) -> ExperimentConfig:
    return config_from_dict(_load_raw_config(args))


def _cmd_gen_data(args) -> int:
    config = _build_config(args)
    train_records, test_records = build_datasets(config)
    out = Path(config.out_dir)
    spec = config.dataset.synthetic
    write_dataset(train_records, out / "train", spec=spec, seed=config.seed)
    write_dataset(test_records, out / "test",
                  spec=replace(spec, count_per_class=config.dataset.test_count_per_class),
                  seed=config.seed)
    log.info("wrote %d train and %d test records under %s",
             len(train_records), len(test_records), out)
    return 0


def _cmd_train(args) -> int:
    config = _build_config(args)
    manifest = run_training(config, data_dir=args.data)
    log.info("training complete; manifest at %s", manifest.out_dir / "manifest.json")
    return 0


def _cmd_eval(args) -> int:
    config = _build_config(args)
    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint")
    out_dir = config.out_dir if args.out is None else args.out
    reports = run_evaluation(config, args.checkpoint, out_dir=out_dir,
                             data_dir=args.data)
    for name, report in reports.items():
        print(report.to_text(), end="")
    return 0


def _cmd_ablate(args) -> int:
    raw = _load_raw_config(args)
    axes = raw.pop("ablation", None)
    if not axes:
        raise ConfigError("ablate needs an 'ablation:' axes section in the config")
    config = config_from_dict(raw)
    rows, table = run_ablation(config, axes, config.out_dir, data_dir=args.data)
    log.info("ablation table with %d rows at %s", len(rows), table)
    return 0


def _cmd_visualize(args) -> int:
    config = _build_config(args)
    if not args.checkpoint:
        raise ConfigError("visualize requires --checkpoint")
    manifest = run_visualization(config, args.checkpoint, config.out_dir,
                                 data_dir=args.data)
    log.info("visualization artifacts at %s", manifest.out_dir)
    return 0


def _cmd_erase_preview(args) -> int:
    config = _build_config(args)
    if args.checkpoint:
        detector = load_checkpoint(args.checkpoint)
    else:
        log.warning("no checkpoint given; previewing with a freshly seeded detector")
        detector = Detector(arch=config.arch,
                            in_channels=config.dataset.synthetic.channels,
                            init_rng=derive_rng(config.seed, "init"))
    _, test_records = build_datasets(config, args.data)
    manifest = erase_preview(config, detector, test_records, config.out_dir,
                             count=args.count)
    log.info("previews at %s", manifest.out_dir)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "visualize": _cmd_visualize,
    "erase-preview": _cmd_erase_preview,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfmlab",
        description="Attention-guided erasing augmentation lab for fake-face detection")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-data", "generate a synthetic dataset to disk"),
        ("train", "train a detector per the config"),
        ("eval", "evaluate a checkpoint on the test set"),
        ("ablate", "run a config grid and tabulate metrics"),
        ("visualize", "emit average attention maps, correlations and CAMs"),
        ("erase-preview", "write original/erased image pairs with traces"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        _add_common(cmd)
        if name == "erase-preview":
            cmd.add_argument("--count", type=int, default=4,
                             help="number of preview samples")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except RfmLabError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - unexpected failure path
        print(f"internal-error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

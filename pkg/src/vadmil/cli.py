"""Command-line entry point: ``vadmil {gen,train,eval,score,sweep}``.

Settings come from built-in defaults, then an optional flat ``key = value``
file given with ``--config``, then command-line flags (highest precedence).
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError, VadError
from .evaluator import evaluate_bags, write_frame_scores_csv, write_roc_csv
from .features import Split, Stream, load_bags, read_feature_file, read_manifest, segmentize
from .objective import ObjectiveConfig
from .optimizers import sweep_grid
from .scorer import load_checkpoint, score_segments
from .synth import SynthSpec, generate
from .trainer import CHECKPOINT_NAME, LOG_NAME, TrainConfig, train, train_bags

REQUIRED = object()


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = str(text).strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return t
    parse.__name__ = "choice"
    return parse


# key -> (parser, default, help)
TRAIN_KEYS: dict[str, tuple[Callable, Any, str]] = {
    "segments": (int, 32, "segments per bag"),
    "batch_pairs": (int, 30, "abnormal/normal bag pairs per batch"),
    "optimizer": (_choice("adagrad", "adam"), "adagrad", "optimizer"),
    "lr": (float, 0.001, "learning rate"),
    "lambda1": (float, 0.00008, "sparsity weight"),
    "lambda2": (float, 0.00008, "smoothness weight"),
    "margin": (float, 1.0, "ranking hinge margin"),
    "dropout": (float, 0.6, "dropout rate of the hidden layers"),
    "iterations": (int, 3000, "training iterations"),
    "stream": (_choice("rgb", "flow", "fused"), "fused", "feature stream"),
    "seed": (int, 0, "random seed"),
    "checkpoint_every": (int, 500, "iterations between checkpoints"),
    "weight_decay": (float, 0.0, "L2 weight decay on weight matrices"),
}

COMMAND_KEYS: dict[str, dict[str, tuple[Callable, Any, str]]] = {
    "gen": {
        "dim": (int, REQUIRED, "fused feature dimension"),
        "out_dir": (str, "data", "output folder"),
        "num_normal": (int, 40, "normal training videos"),
        "num_abnormal": (int, 40, "abnormal training videos"),
        "num_test_normal": (int, 10, "normal test videos"),
        "num_test_abnormal": (int, 10, "abnormal test videos"),
        "min_clips": (int, 32, "minimum clips per video"),
        "max_clips": (int, 64, "maximum clips per video"),
        "separability": (float, 4.0, "mean shift of anomalous clips"),
        "anomaly_fraction": (float, 0.25, "fraction of segments anomalous in abnormal videos"),
        "noise_sigma": (float, 1.0, "clip noise standard deviation"),
        "segments": (int, 32, "segments per bag"),
        "seed": (int, 0, "random seed"),
    },
    "train": {
        "train_manifest": (str, REQUIRED, "train manifest CSV"),
        "out_dir": (str, "run", "output folder for checkpoint and loss log"),
        "resume": (_bool, False, "continue from the checkpoint in out_dir"),
        **TRAIN_KEYS,
    },
    "eval": {
        "checkpoint": (str, REQUIRED, "model checkpoint"),
        "test_manifest": (str, REQUIRED, "test manifest CSV"),
        "out_dir": (str, ".", "folder for roc.csv and frame_scores.csv"),
        "stream": TRAIN_KEYS["stream"],
        "segments": TRAIN_KEYS["segments"],
    },
    "score": {
        "checkpoint": (str, REQUIRED, "model checkpoint"),
        "features": (str, REQUIRED, "feature container (.vfe) to score"),
        "segments": TRAIN_KEYS["segments"],
    },
    "sweep": {
        "train_manifest": (str, REQUIRED, "train manifest CSV"),
        "test_manifest": (str, REQUIRED, "test manifest CSV"),
        "out_dir": (str, "sweep", "output folder for sweep.csv"),
        "jobs": (int, 1, "grid cells run in parallel"),
        **{k: v for k, v in TRAIN_KEYS.items() if k not in ("optimizer", "lr")},
    },
}


def read_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(command: str, flags: dict[str, Any], config_path: str | None) -> dict[str, Any]:
    """Merge defaults < config file < flags and type-check every value."""
    spec = COMMAND_KEYS[command]
    merged: dict[str, Any] = {k: d for k, (_, d, _) in spec.items()}
    if config_path:
        for key, raw in read_config_file(config_path).items():
            if key not in spec:
                raise ConfigError(f"unknown config key {key!r} for '{command}'")
            try:
                merged[key] = spec[key][0](raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
    merged.update(flags)
    missing = [k for k, v in merged.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"missing required key(s) for '{command}': {', '.join(missing)}")
    return merged


def _train_config(cfg: dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig(
            batch_pairs=cfg["batch_pairs"],
            iterations=cfg["iterations"],
            seed=cfg["seed"],
            objective=ObjectiveConfig(cfg["margin"], cfg["lambda1"], cfg["lambda2"]),
            optimizer=cfg["optimizer"],
            lr=cfg["lr"],
            dropout_rate=cfg["dropout"],
            checkpoint_every=cfg["checkpoint_every"],
            stream_mode=cfg["stream"],
            n_segments=cfg["segments"],
            weight_decay=cfg["weight_decay"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_gen(cfg: dict[str, Any]) -> int:
    try:
        spec = SynthSpec(
            dim=cfg["dim"], num_normal=cfg["num_normal"], num_abnormal=cfg["num_abnormal"],
            num_test_normal=cfg["num_test_normal"], num_test_abnormal=cfg["num_test_abnormal"],
            min_clips=cfg["min_clips"], max_clips=cfg["max_clips"],
            separability=cfg["separability"], anomaly_fraction=cfg["anomaly_fraction"],
            noise_sigma=cfg["noise_sigma"], seed=cfg["seed"], n_segments=cfg["segments"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    train_path, test_path = generate(spec, cfg["out_dir"])
    print(train_path)
    print(test_path)
    return 0


def cmd_train(cfg: dict[str, Any]) -> int:
    config = _train_config(cfg)
    manifest = read_manifest(cfg["train_manifest"], Split.TRAIN)
    out = Path(cfg["out_dir"])
    train(manifest, config, out_dir=out, resume=cfg["resume"])
    print(out / CHECKPOINT_NAME)
    print(out / LOG_NAME)
    return 0


def cmd_eval(cfg: dict[str, Any]) -> int:
    net = load_checkpoint(cfg["checkpoint"])
    manifest = read_manifest(cfg["test_manifest"], Split.TEST)
    roc, frames = evaluate_bags(net, load_bags(manifest, Stream.parse(cfg["stream"]), cfg["segments"]))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_roc_csv(roc, out / "roc.csv")
    write_frame_scores_csv(frames, out / "frame_scores.csv")
    print(f"auc={roc.auc:.6f}")
    return 0


def cmd_score(cfg: dict[str, Any]) -> int:
    net = load_checkpoint(cfg["checkpoint"])
    segments = segmentize(read_feature_file(cfg["features"]), cfg["segments"])
    scores = score_segments(net, segments)
    for s in scores:
        print(f"{s:.6f}")
    best = int(scores.argmax())
    print(f"max={scores[best]:.6f} index={best}")
    return 0


def _sweep_cell(args) -> tuple[str, float, float, float]:
    train_bags_, test_bags, config = args
    net, log = train_bags(train_bags_, config)
    roc, _ = evaluate_bags(net, test_bags)
    final = log.records[-1].total if log.records else math.nan
    return config.optimizer.label, config.lr, roc.auc, final


def run_sweep(train_bag_list, test_bag_list, base: TrainConfig, jobs: int = 1):
    """Train and evaluate every (optimizer, lr) cell; rows sorted by AUC, best first."""
    cells = [(train_bag_list, test_bag_list, replace(base, optimizer=kind, lr=lr)) for kind, lr in sweep_grid()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    return sorted(rows, key=lambda r: -r[2])


def format_sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["optimizer", "lr", "auc", "final_loss"])
    for name, lr, auc, final in rows:
        w.writerow([name, repr(lr), repr(auc), repr(final)])
    return buf.getvalue()


def cmd_sweep(cfg: dict[str, Any]) -> int:
    base = _train_config({**cfg, "optimizer": "adagrad", "lr": 0.001})
    stream = Stream.parse(cfg["stream"])
    tr = load_bags(read_manifest(cfg["train_manifest"], Split.TRAIN), stream, cfg["segments"])
    te = load_bags(read_manifest(cfg["test_manifest"], Split.TEST), stream, cfg["segments"])
    text = format_sweep_csv(run_sweep(tr, te, base, max(1, cfg["jobs"])))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "score": cmd_score, "sweep": cmd_sweep}
DESCRIPTIONS = {
    "gen": "generate a synthetic feature dataset and its manifests",
    "train": "train the segment scorer with the MIL ranking objective",
    "eval": "frame-level ROC/AUC of a checkpoint on a test manifest",
    "score": "print the segment scores of one feature file",
    "sweep": "optimizer x learning-rate grid: train and evaluate every cell",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vadmil", description="MIL ranking anomaly scorer: data generation, training, evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name])
        p.add_argument("--config", help="flat 'key = value' config file (flags override it)")
        for key, (conv, default, text) in keys.items():
            shown = "required" if default is REQUIRED else f"default: {default}"
            extra = {"nargs": "?", "const": True} if conv is _bool else {}
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=conv,
                           default=argparse.SUPPRESS, help=f"{text} ({shown})", **extra)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command")
    config_path = ns.pop("config", None)
    verbose = ns.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(command, ns, config_path)
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"vadmil {command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (VadError, OSError, ValueError) as exc:
        print(f"vadmil {command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

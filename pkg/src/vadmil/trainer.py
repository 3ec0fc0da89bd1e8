"""MIL training loop: sample bag pairs, score, rank, backprop, step."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InsufficientBags, NonFiniteLoss
from .features import DEFAULT_SEGMENTS, Bag, DatasetManifest, Label, Split, Stream, load_bags
from .objective import ObjectiveConfig, batch_loss
from .optimizers import OptimizerKind, OptimizerState, apply_step, load_state, make_state, save_state
from .scorer import Mode, ScoringNetwork, backward, forward, init_network, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.vmc"
OPTIMIZER_NAME = "optimizer.vmo"
LOG_NAME = "loss.csv"
LOG_HEADER = ("iteration", "total", "hinge", "sparsity", "smoothness", "ms")


@dataclass(frozen=True)
class TrainConfig:
    batch_pairs: int = 30
    iterations: int = 3000
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimizer: OptimizerKind = OptimizerKind.ADAGRAD
    lr: float = 0.001
    dropout_rate: float = 0.6
    checkpoint_every: int = 500
    stream_mode: Stream = Stream.FUSED
    n_segments: int = DEFAULT_SEGMENTS
    weight_decay: float = 0.0
    epsilon: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        object.__setattr__(self, "optimizer", OptimizerKind.parse(self.optimizer))
        object.__setattr__(self, "stream_mode", Stream.parse(self.stream_mode))
        if self.batch_pairs < 1 or self.iterations < 0 or self.checkpoint_every < 1:
            raise ValueError("batch_pairs and checkpoint_every must be >= 1, iterations >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    total: float
    hinge: float
    sparsity: float
    smoothness: float
    ms: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    def write_csv(self, path: str | Path, timing: bool = True) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_HEADER)
            for r in self.records:
                w.writerow([r.iteration, repr(r.total), repr(r.hinge), repr(r.sparsity),
                            repr(r.smoothness), f"{r.ms:.3f}" if timing else "0"])


def sample_batch(abnormal: Sequence[Bag], normal: Sequence[Bag], batch_pairs: int,
                 rng: np.random.Generator) -> list[tuple[Bag, Bag]]:
    """Draw ``batch_pairs`` abnormal and normal bags without replacement and pair them by position."""
    ia, inn = _sample_indices(len(abnormal), len(normal), batch_pairs, rng)
    return [(abnormal[i], normal[j]) for i, j in zip(ia, inn)]


def _sample_indices(n_abnormal: int, n_normal: int, batch_pairs: int, rng: np.random.Generator):
    if batch_pairs > n_abnormal or batch_pairs > n_normal:
        raise InsufficientBags(
            f"batch of {batch_pairs} pairs needs that many bags per class; "
            f"have {n_abnormal} abnormal, {n_normal} normal")
    ia = rng.choice(n_abnormal, size=batch_pairs, replace=False)
    inn = rng.choice(n_normal, size=batch_pairs, replace=False)
    return ia, inn


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    # keyed per iteration so a resumed run draws the same batches and masks
    return np.random.default_rng([seed, iteration])


def train_bags(bags: Sequence[Bag], config: TrainConfig, network: ScoringNetwork | None = None,
               state: OptimizerState | None = None, start_iteration: int = 0,
               out_dir: str | Path | None = None) -> tuple[ScoringNetwork, TrainLog]:
    """Run ``config.iterations`` optimisation steps on in-memory bags.

    ``network``/``state`` resume an earlier run (both are updated in place).
    When ``out_dir`` is given, checkpoints, optimizer state and the loss CSV
    are written there.
    """
    abnormal = [b for b in bags if b.label == Label.ABNORMAL]
    normal = [b for b in bags if b.label == Label.NORMAL]
    if config.iterations > 0:
        _sample_indices(len(abnormal), len(normal), config.batch_pairs, np.random.default_rng(0))
    dim = bags[0].dim if bags else (network.dim if network else 1)

    net = network if network is not None else init_network(dim, config.dropout_rate, config.seed)
    net.dropout_rate = config.dropout_rate
    if state is None:
        state = make_state(config.optimizer, config.lr, config.epsilon, config.beta1, config.beta2)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    pos_all = np.stack([b.segments for b in abnormal]) if abnormal else None
    neg_all = np.stack([b.segments for b in normal]) if normal else None
    params = net.parameters()
    train_log = TrainLog()
    p = config.batch_pairs

    for it in range(start_iteration, start_iteration + config.iterations):
        t0 = time.perf_counter()
        rng = iteration_rng(config.seed, it)
        ia, inn = _sample_indices(len(abnormal), len(normal), p, rng)
        x = np.concatenate([pos_all[ia], neg_all[inn]])
        scores, trace = forward(net, x, Mode.TRAIN, rng)

        loss = batch_loss(list(zip(scores[:p], scores[p:])), config.objective)
        if not np.isfinite(loss.total):
            raise NonFiniteLoss(it, f"batch loss {loss.total}")
        grads = backward(net, trace, np.concatenate([loss.grad_pos, loss.grad_neg]))
        if config.weight_decay:
            for name in ("W1", "W2", "W3"):
                grads[name] = grads[name] + config.weight_decay * params[name]
        apply_step(params, grads, state)
        if not net.all_finite():
            raise NonFiniteLoss(it, "parameters became non-finite after the optimizer step")

        ms = (time.perf_counter() - t0) * 1000.0
        train_log.records.append(
            TrainRecord(it, loss.total, loss.hinge_term, loss.sparsity_term, loss.smoothness_term, ms))
        done = it + 1 - start_iteration
        if out is not None and done % config.checkpoint_every == 0:
            save_checkpoint(net, out / CHECKPOINT_NAME)
            save_state(state, out / OPTIMIZER_NAME)
        if done % 500 == 0:
            log.info("iteration %d: loss %.6f", it + 1, loss.total)

    if out is not None:
        save_checkpoint(net, out / CHECKPOINT_NAME)
        save_state(state, out / OPTIMIZER_NAME)
        train_log.write_csv(out / LOG_NAME)
    return net, train_log


def train(manifest: DatasetManifest, config: TrainConfig, out_dir: str | Path | None = None,
          resume: bool = False) -> tuple[ScoringNetwork, TrainLog]:
    """Train a scorer on a train-split manifest.

    With ``resume`` the network and optimizer state are restored from
    ``out_dir`` and training continues for ``config.iterations`` more steps.
    """
    if manifest.split != Split.TRAIN:
        raise ValueError("training needs a train-split manifest")
    bags = load_bags(manifest, config.stream_mode, config.n_segments)
    network = state = None
    start = 0
    if resume:
        if out_dir is None:
            raise ValueError("resume needs out_dir")
        network = load_checkpoint(Path(out_dir) / CHECKPOINT_NAME)
        state = load_state(Path(out_dir) / OPTIMIZER_NAME)
        start = state.step_count
    return train_bags(bags, config, network, state, start, out_dir)

"""Frame-level scoring, pooled ROC curve and AUC."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateLabels
from .features import DEFAULT_SEGMENTS, Bag, DatasetManifest, Stream, load_bags
from .scorer import ScoringNetwork, score_segments


@dataclass
class FrameScores:
    video_id: str
    scores: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.int8)
        if self.scores.shape != self.truth.shape or self.scores.ndim != 1:
            raise ValueError(f"{self.video_id}: scores {self.scores.shape} vs truth {self.truth.shape}")


@dataclass
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def expand_to_frames(bag_scores, num_frames: int) -> np.ndarray:
    """Segment ``i`` covers frames ``[floor(i*F/N), floor((i+1)*F/N))``."""
    bag_scores = np.asarray(bag_scores, dtype=np.float64).ravel()
    n = bag_scores.size
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    bounds = (np.arange(n + 1, dtype=np.int64) * num_frames) // n
    return np.repeat(bag_scores, np.diff(bounds))


def frame_truth(spans: Sequence[tuple[int, int]], num_frames: int) -> np.ndarray:
    truth = np.zeros(num_frames, dtype=np.int8)
    for s, e in spans:
        truth[s:e] = 1
    return truth


def _pool(pooled: Sequence[FrameScores]) -> tuple[np.ndarray, np.ndarray]:
    if not pooled:
        raise DegenerateLabels("no frames to evaluate")
    scores = np.concatenate([f.scores for f in pooled])
    truth = np.concatenate([f.truth for f in pooled]).astype(bool)
    return scores, truth


def _check_labels(truth: np.ndarray) -> None:
    if truth.all() or not truth.any():
        raise DegenerateLabels("ROC needs at least one positive and one negative frame")


def roc_curve(scores, truth) -> RocResult:
    """ROC over distinct thresholds (descending); equal scores form one step."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).astype(bool).ravel()
    _check_labels(truth)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], truth[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(t)[ends]
    fp = (ends + 1) - tp
    pos, neg = tp[-1], fp[-1]
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocResult(fpr=fpr, tpr=tpr, thresholds=s[ends], auc=auc)


def roc_auc(pooled: Sequence[FrameScores]) -> RocResult:
    return roc_curve(*_pool(pooled))


def pair_count_auc(scores, truth) -> float:
    """Exhaustive Mann-Whitney count: ties between a positive and a negative score half a pair."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).astype(bool).ravel()
    _check_labels(truth)
    sp = scores[truth][:, None]
    sn = scores[~truth][None, :]
    wins = np.count_nonzero(sp > sn)
    ties = np.count_nonzero(sp == sn)
    return (wins + 0.5 * ties) / (sp.size * sn.size)


def auc_pair_oracle(pooled: Sequence[FrameScores]) -> float:
    return pair_count_auc(*_pool(pooled))


def bag_frame_scores(bag: Bag, segment_scores) -> FrameScores:
    return FrameScores(
        video_id=bag.video_id,
        scores=expand_to_frames(segment_scores, bag.num_frames),
        truth=frame_truth(bag.anomaly_spans, bag.num_frames),
    )


def evaluate_bags(net: ScoringNetwork, bags: Sequence[Bag]) -> tuple[RocResult, list[FrameScores]]:
    frames = [bag_frame_scores(b, score_segments(net, b.segments)) for b in bags]
    return roc_auc(frames), frames


def evaluate(net: ScoringNetwork, manifest: DatasetManifest, stream: Stream | str = Stream.FUSED,
             n_segments: int = DEFAULT_SEGMENTS) -> tuple[RocResult, list[FrameScores]]:
    return evaluate_bags(net, load_bags(manifest, stream, n_segments))


def write_roc_csv(roc: RocResult, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        thresholds = np.r_[np.inf, roc.thresholds]
        for th, f, t in zip(thresholds, roc.fpr, roc.tpr):
            w.writerow([repr(float(th)), repr(float(f)), repr(float(t))])


def write_frame_scores_csv(frames: Sequence[FrameScores], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "frame", "score", "truth"])
        for fs in frames:
            for i, (s, t) in enumerate(zip(fs.scores.tolist(), fs.truth.tolist())):
                w.writerow([fs.video_id, i, f"{s:.6f}", t])

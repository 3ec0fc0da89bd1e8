"""Synthetic stand-in dataset with a planted Gaussian mean shift.

Normal clips are ``N(0, sigma^2 I)``; anomalous clips are shifted along the
unit direction ``1/sqrt(dim)`` by ``separability``.  Every abnormal video gets
one contiguous run of anomalous segments; the recorded frame span is exactly
the frames that the evaluator maps onto those segments, so truth never points
at a segment built from normal clips.  Features are written as separate RGB
and Flow containers (``ceil(dim/2)`` and ``floor(dim/2)`` columns) so all
three stream modes can be exercised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .evaluator import FrameScores, bag_frame_scores
from .features import (
    DEFAULT_SEGMENTS,
    DatasetManifest,
    FeatureTensor,
    Label,
    ManifestEntry,
    Split,
    Stream,
    load_bags,
    segment_bounds,
    write_feature_file,
    write_manifest,
)
from .scorer import sigmoid

FRAMES_PER_CLIP = 16


@dataclass(frozen=True)
class SynthSpec:
    dim: int
    num_normal: int = 40
    num_abnormal: int = 40
    num_test_normal: int = 10
    num_test_abnormal: int = 10
    min_clips: int = 32
    max_clips: int = 64
    separability: float = 4.0
    anomaly_fraction: float = 0.25
    noise_sigma: float = 1.0
    seed: int = 0
    n_segments: int = DEFAULT_SEGMENTS

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2 (features are split into RGB and Flow halves)")
        counts = (self.num_normal, self.num_abnormal, self.num_test_normal, self.num_test_abnormal)
        if min(counts) < 0 or self.num_normal + self.num_abnormal < 1:
            raise ValueError("video counts must be non-negative with at least one training video")
        if not 1 <= self.min_clips <= self.max_clips:
            raise ValueError("need 1 <= min_clips <= max_clips")
        if self.separability < 0:
            raise ValueError("separability must be >= 0")
        if not 0 < self.anomaly_fraction <= 1:
            raise ValueError("anomaly_fraction must lie in (0, 1]")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be > 0")
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")

    @property
    def direction(self) -> np.ndarray:
        return np.full(self.dim, 1.0 / math.sqrt(self.dim))

    @property
    def rgb_dim(self) -> int:
        return (self.dim + 1) // 2


def anomalous_clip_range(num_clips: int, n_segments: int, first: int, count: int) -> tuple[int, int]:
    """Clips feeding segments ``first..first+count-1`` under the pooling rule."""
    bounds = segment_bounds(num_clips, n_segments)
    if num_clips >= n_segments:
        return int(bounds[first]), int(bounds[first + count])
    return int(bounds[first]), int(bounds[first + count - 1]) + 1


def _make_video(rng: np.random.Generator, spec: SynthSpec, abnormal: bool):
    t = int(rng.integers(spec.min_clips, spec.max_clips + 1))
    x = rng.normal(0.0, spec.noise_sigma, size=(t, spec.dim))
    frames = FRAMES_PER_CLIP * t
    spans: list[tuple[int, int]] = []
    if abnormal:
        n = spec.n_segments
        count = max(1, min(n, round(spec.anomaly_fraction * n)))
        first = int(rng.integers(0, n - count + 1))
        c0, c1 = anomalous_clip_range(t, n, first, count)
        x[c0:c1] += spec.separability * spec.direction
        s = (first * frames) // n
        e = ((first + count) * frames) // n
        if e > s:
            spans.append((s, e))
    return x.astype(np.float32), frames, spans


def generate(spec: SynthSpec, out_dir: str | Path) -> tuple[Path, Path]:
    """Write feature files plus ``train.csv`` / ``test.csv`` manifests; returns their paths."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    plan = [
        (Split.TRAIN, "train", Label.NORMAL, spec.num_normal),
        (Split.TRAIN, "train", Label.ABNORMAL, spec.num_abnormal),
        (Split.TEST, "test", Label.NORMAL, spec.num_test_normal),
        (Split.TEST, "test", Label.ABNORMAL, spec.num_test_abnormal),
    ]
    entries: dict[Split, list[ManifestEntry]] = {Split.TRAIN: [], Split.TEST: []}
    for split, tag, label, count in plan:
        for k in range(count):
            x, frames, spans = _make_video(rng, spec, label == Label.ABNORMAL)
            if label == Label.ABNORMAL and not spans:
                raise ManifestError("video too short to hold an anomalous frame span")
            stem = feat_dir / f"{tag}_{label.value}_{k:04d}"
            write_feature_file(FeatureTensor(Stream.RGB, x[:, :spec.rgb_dim]),
                               stem.with_name(stem.name + Stream.RGB.suffix))
            write_feature_file(FeatureTensor(Stream.FLOW, x[:, spec.rgb_dim:]),
                               stem.with_name(stem.name + Stream.FLOW.suffix))
            kept = spans if split == Split.TEST else []
            entries[split].append(ManifestEntry(stem, label, frames, kept))

    train_path, test_path = out_dir / "train.csv", out_dir / "test.csv"
    write_manifest(DatasetManifest(entries[Split.TRAIN], Split.TRAIN), train_path)
    write_manifest(DatasetManifest(entries[Split.TEST], Split.TEST), test_path)
    return train_path, test_path


def oracle_segment_scores(spec: SynthSpec, segments: np.ndarray) -> np.ndarray:
    """Projection on the planted direction, centred between the two means and squashed into (0, 1)."""
    proj = np.asarray(segments, dtype=np.float64) @ spec.direction
    return sigmoid((proj - spec.separability / 2.0) / spec.noise_sigma)


def oracle_scorer(spec: SynthSpec, manifest: DatasetManifest) -> list[FrameScores]:
    """Frame scores from the oracle projection (needs fused features and spans)."""
    bags = load_bags(manifest, Stream.FUSED, spec.n_segments)
    return [bag_frame_scores(b, oracle_segment_scores(spec, b.segments)) for b in bags]


def gaussian_auc(separability: float, sigma: float) -> float:
    """AUC of a 1-D projection separating two equal-variance Gaussians: ``Phi(s / (sigma*sqrt(2)))``."""
    return 0.5 * (1.0 + math.erf(separability / (sigma * math.sqrt(2.0)) / math.sqrt(2.0)))

"""Feature containers, dataset manifests, stream fusion and segment pooling.

Container layout (little-endian)::

    0..3    b"VFE1"
    4..7    u32 stream code (0=RGB, 1=Flow, 2=Fused)
    8..11   u32 number of clips T
    12..15  u32 feature dimension D
    16..    T*D float32, row-major

A manifest is a headerless UTF-8 CSV with one video per line::

    feature_path,label,num_frames,spans

``label`` is ``normal`` or ``abnormal`` and ``spans`` is ``s1-e1;s2-e2``
(half-open frame intervals) or empty.  ``feature_path`` is the *stem* of the
video's feature set: the per-stream containers live next to it as
``<stem>.rgb.vfe``, ``<stem>.flow.vfe`` and optionally a pre-fused
``<stem>.fused.vfe``.  Relative stems resolve against the manifest's folder.
"""

from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    ClipCountMismatch,
    EmptyTensor,
    FeatureFormatError,
    ManifestError,
    NonFiniteValue,
    TruncatedPayload,
)

MAGIC = b"VFE1"
HEADER = struct.Struct("<4sIII")
DEFAULT_SEGMENTS = 32


class Stream(enum.IntEnum):
    RGB = 0
    FLOW = 1
    FUSED = 2

    @classmethod
    def parse(cls, name: "str | Stream") -> "Stream":
        if isinstance(name, Stream):
            return name
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown stream {name!r}; expected rgb, flow or fused") from None

    @property
    def suffix(self) -> str:
        return f".{self.name.lower()}.vfe"


class Label(enum.Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class FeatureTensor:
    """Clip-level features of one video: ``data`` is ``(num_clips, dim)`` float32."""

    stream: Stream
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"feature data must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ValueError("feature dimension must be positive")
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue("feature tensor contains NaN or Inf")
        object.__setattr__(self, "stream", Stream(self.stream))
        object.__setattr__(self, "data", data)

    @property
    def num_clips(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def encode_features(tensor: FeatureTensor) -> bytes:
    header = HEADER.pack(MAGIC, int(tensor.stream), tensor.num_clips, tensor.dim)
    return header + tensor.data.astype("<f4", copy=False).tobytes(order="C")


def decode_features(buf: bytes) -> FeatureTensor:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < HEADER.size:
        raise TruncatedPayload(f"header needs {HEADER.size} bytes, file has {len(buf)}")
    _, code, t, d = HEADER.unpack_from(buf)
    if code not in (0, 1, 2):
        raise FeatureFormatError(f"unknown stream code {code}")
    expected = HEADER.size + 4 * t * d
    if len(buf) != expected:
        raise TruncatedPayload(f"expected {expected} bytes for T={t}, D={d}, got {len(buf)}")
    if t == 0:
        raise EmptyTensor("feature file holds zero clips")
    if d == 0:
        raise FeatureFormatError("feature file declares zero dimension")
    data = np.frombuffer(buf, dtype="<f4", offset=HEADER.size).reshape(t, d)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("feature payload contains NaN or Inf")
    return FeatureTensor(Stream(code), data.astype(np.float32))


def read_feature_file(path: str | Path) -> FeatureTensor:
    return decode_features(Path(path).read_bytes())


def write_feature_file(tensor: FeatureTensor, path: str | Path) -> None:
    Path(path).write_bytes(encode_features(tensor))


def fuse_streams(rgb: FeatureTensor, flow: FeatureTensor) -> FeatureTensor:
    """Late fusion: concatenate RGB and Flow features clip by clip."""
    if rgb.stream != Stream.RGB or flow.stream != Stream.FLOW:
        raise ValueError(f"fusion needs (RGB, Flow), got ({rgb.stream.name}, {flow.stream.name})")
    if rgb.num_clips != flow.num_clips:
        raise ClipCountMismatch(f"RGB has {rgb.num_clips} clips, Flow has {flow.num_clips}")
    return FeatureTensor(Stream.FUSED, np.concatenate([rgb.data, flow.data], axis=1))


def segment_bounds(num_clips: int, n_segments: int) -> np.ndarray:
    """Start index of every segment plus a final sentinel: ``floor(i*T/N)`` for i in 0..N."""
    i = np.arange(n_segments + 1, dtype=np.int64)
    return (i * num_clips) // n_segments


def segmentize(tensor: FeatureTensor | np.ndarray, n_segments: int = DEFAULT_SEGMENTS) -> np.ndarray:
    """Pool clip features into ``n_segments`` rows (float64).

    With ``T >= N`` segment ``i`` averages clips ``[floor(i*T/N), floor((i+1)*T/N))``.
    With ``T < N`` segment ``i`` copies clip ``floor(i*T/N)``.
    """
    data = tensor.data if isinstance(tensor, FeatureTensor) else np.asarray(tensor)
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    t = data.shape[0]
    if t == 0:
        raise EmptyTensor("cannot segmentize a tensor with zero clips")
    data = data.astype(np.float64)
    bounds = segment_bounds(t, n_segments)
    if t < n_segments:
        return data[bounds[:-1]].copy()
    sums = np.add.reduceat(data, bounds[:-1], axis=0)
    counts = np.diff(bounds).astype(np.float64)
    return sums / counts[:, None]


# ---------------------------------------------------------------------------
# manifests and bags


def _parse_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        try:
            s, e = part.split("-")
            spans.append((int(s), int(e)))
        except ValueError:
            raise ManifestError(f"malformed span {part!r}") from None
    return spans


def _format_spans(spans: Iterable[tuple[int, int]]) -> str:
    return ";".join(f"{s}-{e}" for s, e in spans)


@dataclass(frozen=True)
class ManifestEntry:
    feature_path: Path
    label: Label
    num_frames: int
    anomaly_spans: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "feature_path", Path(self.feature_path))
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "anomaly_spans", tuple((int(s), int(e)) for s, e in self.anomaly_spans))
        validate_spans(self.label, self.num_frames, self.anomaly_spans)

    @property
    def video_id(self) -> str:
        return self.feature_path.name

    def stream_path(self, stream: Stream) -> Path:
        return self.feature_path.with_name(self.feature_path.name + stream.suffix)


def validate_spans(label: Label, num_frames: int, spans: Sequence[tuple[int, int]]) -> None:
    if num_frames < 1:
        raise ManifestError(f"num_frames must be positive, got {num_frames}")
    if label == Label.NORMAL and spans:
        raise ManifestError("normal videos cannot carry anomaly spans")
    for s, e in spans:
        if not 0 <= s < e <= num_frames:
            raise ManifestError(f"span [{s},{e}) outside 0 <= start < end <= {num_frames}")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    split: Split

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "split", Split(self.split))
        if self.split == Split.TRAIN:
            for e in self.entries:
                if e.anomaly_spans:
                    raise ManifestError(f"train entry {e.video_id} carries frame-level spans")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def check_files(self, stream: Stream) -> None:
        """Make sure every entry can be loaded in ``stream`` mode."""
        for e in self.entries:
            load_stream(e, stream)


def read_manifest(path: str | Path, split: Split | str) -> DatasetManifest:
    path = Path(path)
    base = path.parent
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            fpath, label, frames, spans = (c.strip() for c in row)
            try:
                lab = Label(label.lower())
                nframes = int(frames)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bad label or frame count") from None
            fp = Path(fpath)
            if not fp.is_absolute():
                fp = base / fp
            try:
                entries.append(ManifestEntry(fp, lab, nframes, _parse_spans(spans)))
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return DatasetManifest(entries, split)


def write_manifest(manifest: DatasetManifest, path: str | Path, relative_to: str | Path | None = None) -> None:
    path = Path(path)
    root = Path(relative_to) if relative_to is not None else path.parent
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for e in manifest.entries:
            fp = e.feature_path
            try:
                fp = fp.relative_to(root)
            except ValueError:
                pass
            w.writerow([fp.as_posix(), e.label.value, e.num_frames, _format_spans(e.anomaly_spans)])


@dataclass
class Bag:
    """One video as a fixed set of segment instances."""

    video_id: str
    label: Label
    segments: np.ndarray
    num_frames: int
    anomaly_spans: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64)
        if self.segments.ndim != 2 or self.segments.shape[0] < 1:
            raise ValueError(f"segments must be a non-empty N x D matrix, got {self.segments.shape}")
        if not np.all(np.isfinite(self.segments)):
            raise NonFiniteValue(f"bag {self.video_id} has non-finite segment features")
        self.label = Label(self.label)
        self.anomaly_spans = [(int(s), int(e)) for s, e in self.anomaly_spans]
        validate_spans(self.label, self.num_frames, self.anomaly_spans)

    @property
    def n_segments(self) -> int:
        return self.segments.shape[0]

    @property
    def dim(self) -> int:
        return self.segments.shape[1]


def load_stream(entry: ManifestEntry, stream: Stream) -> FeatureTensor:
    """Load one stream of a manifest entry; fused falls back to fusing RGB and Flow."""
    stream = Stream.parse(stream)
    path = entry.stream_path(stream)
    if stream != Stream.FUSED or path.exists():
        tensor = read_feature_file(path)
        if tensor.stream != stream:
            raise FeatureFormatError(f"{path} holds {tensor.stream.name}, expected {stream.name}")
        return tensor
    return fuse_streams(
        load_stream(entry, Stream.RGB),
        load_stream(entry, Stream.FLOW),
    )


def build_bag(entry: ManifestEntry, stream: Stream | str = Stream.FUSED,
              n_segments: int = DEFAULT_SEGMENTS) -> Bag:
    tensor = load_stream(entry, Stream.parse(stream))
    return Bag(
        video_id=entry.video_id,
        label=entry.label,
        segments=segmentize(tensor, n_segments),
        num_frames=entry.num_frames,
        anomaly_spans=list(entry.anomaly_spans),
    )


def load_bags(manifest: DatasetManifest, stream: Stream | str = Stream.FUSED,
              n_segments: int = DEFAULT_SEGMENTS) -> list[Bag]:
    return [build_bag(e, stream, n_segments) for e in manifest.entries]

"""Three-layer fully connected segment scorer with hand-written backprop.

Layout is ``D -> 512 -> 32 -> 1`` with ReLU on the hidden layers, inverted
dropout after each hidden activation (train mode only) and a sigmoid output.
Inputs may be a single vector ``(D,)``, one bag ``(N, D)`` or a stack of bags
``(B, N, D)``; in train mode every bag draws one dropout mask per layer that
is shared by all of its segments.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DimensionMismatch, TraceMismatch

HIDDEN = (512, 32)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
CKPT_MAGIC = b"VMC1"

_ONE_BELOW = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class ScoringNetwork:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    dropout_rate: float = 0.6
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        h1, d = self.W1.shape
        h2 = self.W2.shape[0]
        shapes = {"b1": (h1,), "W2": (h2, h1), "b2": (h2,), "W3": (1, h2), "b3": (1,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> tuple[int, int]:
        return self.W1.shape[0], self.W2.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to the parameter arrays, keyed by name."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ScoringNetwork":
        return ScoringNetwork(**{k: v.copy() for k, v in self.parameters().items()},
                              dropout_rate=self.dropout_rate, rng_seed=self.rng_seed)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters().values())


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_network(dim: int, dropout_rate: float = 0.6, seed: int = 0,
                 hidden: tuple[int, int] = HIDDEN) -> ScoringNetwork:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = (dim, *hidden, 1)
    params = {}
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
        bound = glorot_bound(fan_in, fan_out)
        params[f"W{k}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"b{k}"] = np.zeros(fan_out)
    return ScoringNetwork(**params, dropout_rate=dropout_rate, rng_seed=seed)


def zero_network(dim: int, hidden: tuple[int, int] = HIDDEN, dropout_rate: float = 0.6) -> ScoringNetwork:
    h1, h2 = hidden
    return ScoringNetwork(np.zeros((h1, dim)), np.zeros(h1), np.zeros((h2, h1)), np.zeros(h2),
                          np.zeros((1, h2)), np.zeros(1), dropout_rate=dropout_rate)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep scores strictly inside (0, 1)
    return np.clip(out, _TINY, _ONE_BELOW)


@dataclass
class ForwardTrace:
    """Cached activations, flattened to ``(rows, width)``.

    ``h1``/``h2`` are the hidden outputs after ReLU and dropout; ``m1``/``m2``
    are the masks (``None`` in eval mode or with a zero dropout rate).
    """

    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    m1: np.ndarray | None
    z2: np.ndarray
    h2: np.ndarray
    m2: np.ndarray | None
    z3: np.ndarray
    score: np.ndarray


def _mask(rng: np.random.Generator, shape: tuple[int, ...], p: float) -> np.ndarray:
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def _mask_shape(x: np.ndarray, width: int) -> tuple[int, ...]:
    if x.ndim == 1:
        return (width,)
    return x.shape[:-2] + (1, width)


def _scale_rows(a: np.ndarray, mask: np.ndarray | None, lead: tuple[int, ...]) -> None:
    """In place: multiply flattened rows by their bag's mask."""
    if mask is not None:
        view = a.reshape(lead + (a.shape[-1],))
        view *= mask


def forward(net: ScoringNetwork, x: np.ndarray, mode: Mode | str = Mode.EVAL,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardTrace]:
    """Score segments; returns scores of shape ``x.shape[:-1]`` and the trace for backprop."""
    mode = Mode(mode)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.dim:
        raise DimensionMismatch(f"input has {x.shape[-1]} features, network expects {net.dim}")
    dropout = mode is Mode.TRAIN and net.dropout_rate > 0.0
    if dropout and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")
    width1, width2 = net.hidden
    lead = x.shape[:-1]
    flat = x.reshape(-1, net.dim)

    z1 = flat @ net.W1.T
    z1 += net.b1
    h1 = np.maximum(z1, 0.0)
    m1 = _mask(rng, _mask_shape(x, width1), net.dropout_rate) if dropout else None
    _scale_rows(h1, m1, lead)

    z2 = h1 @ net.W2.T
    z2 += net.b2
    h2 = np.maximum(z2, 0.0)
    m2 = _mask(rng, _mask_shape(x, width2), net.dropout_rate) if dropout else None
    _scale_rows(h2, m2, lead)

    z3 = (h2 @ net.W3.T + net.b3)[:, 0]
    score = sigmoid(z3).reshape(lead)
    return score, ForwardTrace(x, z1, h1, m1, z2, h2, m2, z3, score)


def score_segments(net: ScoringNetwork, x: np.ndarray) -> np.ndarray:
    return forward(net, x, Mode.EVAL)[0]


def backward(net: ScoringNetwork, trace: ForwardTrace, d_score) -> dict[str, np.ndarray]:
    """Gradients of a loss w.r.t. every parameter, given dloss/dscore per segment."""
    d_score = np.asarray(d_score, dtype=np.float64)
    if (d_score.shape != trace.score.shape or trace.x.shape[-1] != net.dim
            or trace.z1.shape[-1] != net.W1.shape[0] or trace.z2.shape[-1] != net.W2.shape[0]):
        raise TraceMismatch("trace does not belong to this network / gradient shape")
    lead = trace.x.shape[:-1]
    x = trace.x.reshape(-1, net.dim)
    s = trace.score.reshape(-1)
    dz3 = (d_score.reshape(-1) * s * (1.0 - s))[:, None]

    grads = {"W3": dz3.T @ trace.h2, "b3": dz3.sum(axis=0)}
    dz2 = dz3 @ net.W3
    _scale_rows(dz2, trace.m2, lead)
    dz2 *= trace.z2 > 0
    grads["W2"] = dz2.T @ trace.h1
    grads["b2"] = dz2.sum(axis=0)
    dz1 = dz2 @ net.W2
    _scale_rows(dz1, trace.m1, lead)
    dz1 *= trace.z1 > 0
    grads["W1"] = dz1.T @ x
    grads["b1"] = dz1.sum(axis=0)
    return {k: grads[k] for k in PARAM_NAMES}


# ---------------------------------------------------------------------------
# checkpoints: b"VMC1", u32 D, f32 dropout, then W1 b1 W2 b2 W3 b3 as f32 LE


def encode_checkpoint(net: ScoringNetwork) -> bytes:
    if net.hidden != HIDDEN:
        raise CheckpointError(f"checkpoint format fixes hidden sizes {HIDDEN}, network has {net.hidden}")
    parts = [CKPT_MAGIC, struct.pack("<If", net.dim, net.dropout_rate)]
    parts += [p.astype("<f4").tobytes(order="C") for p in net.parameters().values()]
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> ScoringNetwork:
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {bytes(buf[:4])!r}")
    if len(buf) < 12:
        raise CheckpointError("checkpoint header truncated")
    dim, rate = struct.unpack_from("<If", buf, 4)
    h1, h2 = HIDDEN
    shapes = [(h1, dim), (h1,), (h2, h1), (h2,), (1, h2), (1,)]
    expected = 12 + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(buf) != expected:
        raise CheckpointError(f"checkpoint for D={dim} needs {expected} bytes, got {len(buf)}")
    offset, params = 12, {}
    for name, shape in zip(PARAM_NAMES, shapes):
        n = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=offset).reshape(shape)
        params[name] = arr.astype(np.float64)
        offset += 4 * n
    net = ScoringNetwork(**params, dropout_rate=float(rate))
    if not net.all_finite():
        raise CheckpointError("checkpoint contains non-finite parameters")
    return net


def save_checkpoint(net: ScoringNetwork, path: str | Path) -> None:
    Path(path).write_bytes(encode_checkpoint(net))


def load_checkpoint(path: str | Path) -> ScoringNetwork:
    return decode_checkpoint(Path(path).read_bytes())

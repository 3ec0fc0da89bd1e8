"""Adagrad and Adam with per-parameter state.

Parameters and gradients are dicts of numpy arrays keyed by name; updates are
applied in place so a network's ``parameters()`` view can be passed directly.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, NonFiniteGradient, ShapeMismatch

LEARNING_RATES = (0.01, 0.001, 0.0001)
STATE_MAGIC = b"VMO1"


class OptimizerKind(enum.IntEnum):
    ADAGRAD = 0
    ADAM = 1

    @classmethod
    def parse(cls, name: "str | OptimizerKind") -> "OptimizerKind":
        if isinstance(name, OptimizerKind):
            return name
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown optimizer {name!r}; expected adagrad or adam") from None

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass
class OptimizerState:
    kind: OptimizerKind
    learning_rate: float
    epsilon: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    step_count: int = 0
    # Adagrad: {"G": {name: sum of g^2}}; Adam: {"m": {...}, "v": {...}}
    accumulators: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = OptimizerKind.parse(self.kind)


def make_state(kind: OptimizerKind | str, learning_rate: float, epsilon: float = 1e-8,
               beta1: float = 0.9, beta2: float = 0.999) -> OptimizerState:
    return OptimizerState(OptimizerKind.parse(kind), learning_rate, epsilon, beta1, beta2)


def _check(params: dict, grads: dict) -> None:
    if params.keys() != grads.keys():
        raise ShapeMismatch(f"parameter names {sorted(params)} != gradient names {sorted(grads)}")
    for k, p in params.items():
        if np.shape(grads[k]) != p.shape:
            raise ShapeMismatch(f"{k}: parameter {p.shape} vs gradient {np.shape(grads[k])}")
        if not np.all(np.isfinite(grads[k])):
            raise NonFiniteGradient(f"gradient for {k} is not finite")


def _buffer(state: OptimizerState, slot: str, name: str, like: np.ndarray) -> np.ndarray:
    slot_buf = state.accumulators.setdefault(slot, {})
    if name not in slot_buf:
        slot_buf[name] = np.zeros_like(like, dtype=np.float64)
    return slot_buf[name]


def adagrad_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """``G += g**2; theta -= lr * g / (sqrt(G) + eps)``."""
    if state.kind != OptimizerKind.ADAGRAD:
        raise ValueError(f"adagrad_step called with {state.kind.name} state")
    _check(params, grads)
    for k, p in params.items():
        g = grads[k]
        acc = _buffer(state, "G", k, p)
        acc += g * g
        p -= state.learning_rate * g / (np.sqrt(acc) + state.epsilon)
    state.step_count += 1
    return params, state


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    if state.kind != OptimizerKind.ADAM:
        raise ValueError(f"adam_step called with {state.kind.name} state")
    _check(params, grads)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        m = _buffer(state, "m", k, p)
        v = _buffer(state, "v", k, p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    state.step_count = t
    return params, state


def apply_step(params, grads, state: OptimizerState):
    if state.kind == OptimizerKind.ADAGRAD:
        return adagrad_step(params, grads, state)
    return adam_step(params, grads, state)


def sweep_grid() -> list[tuple[OptimizerKind, float]]:
    return [(kind, lr) for kind in (OptimizerKind.ADAGRAD, OptimizerKind.ADAM) for lr in LEARNING_RATES]


# ---------------------------------------------------------------------------
# state files: b"VMO1", u32 kind, 4 x f64 (lr, eps, beta1, beta2), u64 steps,
# u32 buffer count, then per buffer: u16 key length, key "slot/name",
# u32 ndim, u32 dims..., f64 data


def encode_state(state: OptimizerState) -> bytes:
    out = [STATE_MAGIC, struct.pack("<I4dQ", int(state.kind), state.learning_rate, state.epsilon,
                                    state.beta1, state.beta2, state.step_count)]
    buffers = [(f"{slot}/{name}", arr) for slot in sorted(state.accumulators)
               for name, arr in sorted(state.accumulators[slot].items())]
    out.append(struct.pack("<I", len(buffers)))
    for key, arr in buffers:
        kb = key.encode("utf-8")
        out.append(struct.pack("<H", len(kb)) + kb)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.astype("<f8").tobytes(order="C"))
    return b"".join(out)


def decode_state(buf: bytes) -> OptimizerState:
    if buf[:4] != STATE_MAGIC:
        raise CheckpointError(f"bad optimizer state magic {bytes(buf[:4])!r}")
    try:
        kind, lr, eps, b1, b2, steps = struct.unpack_from("<I4dQ", buf, 4)
        off = 4 + struct.calcsize("<I4dQ")
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        state = OptimizerState(OptimizerKind(kind), lr, eps, b1, b2, steps)
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", buf, off)
            off += 2
            slot, name = buf[off:off + klen].decode("utf-8").split("/", 1)
            off += klen
            (ndim,) = struct.unpack_from("<I", buf, off)
            shape = struct.unpack_from(f"<{ndim}I", buf, off + 4)
            off += 4 + 4 * ndim
            n = int(np.prod(shape))
            arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
            state.accumulators.setdefault(slot, {})[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt optimizer state: {exc}") from None
    if off != len(buf):
        raise CheckpointError("trailing bytes in optimizer state")
    return state


def save_state(state: OptimizerState, path: str | Path) -> None:
    Path(path).write_bytes(encode_state(state))


def load_state(path: str | Path) -> OptimizerState:
    return decode_state(Path(path).read_bytes())

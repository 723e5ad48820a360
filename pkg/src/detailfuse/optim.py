"""Parameter registry, AdamW with decoupled weight decay, value clipping,
and the binary parameter checkpoint format (magic "DFW1", little-endian)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import BankFormatError, ConfigError

CHECKPOINT_MAGIC = b"DFW1"


class Parameters(dict):
    """Named trainable tensors; insertion order is the serialization order."""

    def zero_grad(self):
        for t in self.values():
            t.grad = np.zeros_like(t.data)

    def count(self) -> int:
        return sum(t.data.size for t in self.values())


class AdamW:
    """Standard AdamW; state is kept per parameter name."""

    def __init__(
        self,
        params: Parameters,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)


def adamw_step(
    params: Parameters,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    state: AdamW | None = None,
) -> AdamW:
    """One AdamW update from the gradients currently stored on params."""
    if state is None:
        state = AdamW(params, lr, betas, eps, weight_decay)
    state.step(lr)
    return state


def clip_grad_value(params: Parameters, clip: float):
    """Bound every gradient component to [-clip, +clip] in place."""
    if clip <= 0:
        raise ConfigError(f"clip value must be positive, got {clip}")
    for p in params.values():
        np.clip(p.grad, -clip, clip, out=p.grad)


def save_params(params: Parameters, path: str | Path):
    """Write params as: magic, count u32, then per parameter
    name_len u32 + UTF-8 name, rank u32, shape u32*rank, f64 data (LE)."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", p.data.ndim))
            f.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_params(path: str | Path) -> Parameters:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BankFormatError(f"bad checkpoint magic in {path}", offset=0)
    off = 4

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise BankFormatError(f"truncated checkpoint {path}", offset=off)
        chunk = blob[off : off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    params = Parameters()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape)
        params[name] = Tensor(data.copy(), requires_grad=True)
    return params

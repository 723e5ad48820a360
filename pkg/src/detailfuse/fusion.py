"""Detail-injecting feature fusion.

A small encoder-decoder transformer compresses the p patch features of an
image into one unit vector: the encoder reads the patch tokens (order-free,
no positional encoding), the decoder reads the whole-image feature as its
single target token and cross-attends to the encoder output.  Training pulls
the text-to-fused similarity matrix toward the text-to-best-patch similarity
matrix (MSE), using every class prompt of the dataset as a weak proxy.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError
from .geometry import PatchBox
from .optim import AdamW, Parameters, clip_grad_value, load_params, save_params

CONFIG_PARAM = "_config"  # checkpoint parameter carrying the architecture scalars


@dataclass(frozen=True)
class FusionConfig:
    dim: int = 512
    enc_layers: int = 3
    dec_layers: int = 3
    heads: int = 8
    ff_dim: int | None = None
    use_box_encoding: bool = False
    ln_eps: float = 1e-4
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ConfigError("enc_layers and dec_layers must be >= 1")
        if self.ln_eps <= 0:
            raise ConfigError(f"ln_eps must be positive, got {self.ln_eps}")
        if self.dropout != 0.0:
            raise ConfigError("dropout is not implemented; use 0.0")

    @property
    def ff(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.dim


@dataclass(frozen=True)
class TrainConfig:
    """Defaults were selected by grid search on the synthetic calibration world."""

    lr: float = 0.003
    weight_decay: float = 0.0
    grad_clip: float = 1e-4
    ln_eps: float = 1e-4
    lr_step: int = 120
    lr_gamma: float = 0.7
    batch_size: int = 30
    epochs: int = 10
    warmup_steps: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size >= 1 and epochs >= 0 required")


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init_params(cfg: FusionConfig, seed: int) -> Parameters:
    rng = np.random.default_rng(seed)
    params = Parameters()
    d, f = cfg.dim, cfg.ff

    def linear(name: str, n_in: int, n_out: int):
        params[f"{name}.w"] = Tensor(_xavier(rng, n_in, n_out), requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(n_out), requires_grad=True)

    def ln(name: str):
        params[f"{name}.g"] = Tensor(np.ones(d), requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(d), requires_grad=True)

    def block(prefix: str, cross: bool):
        ln(f"{prefix}.ln1")
        for part in ("q", "k", "v", "o"):
            linear(f"{prefix}.attn.{part}", d, d)
        if cross:
            ln(f"{prefix}.ln_x")
            for part in ("q", "k", "v", "o"):
                linear(f"{prefix}.xattn.{part}", d, d)
        ln(f"{prefix}.ln2")
        linear(f"{prefix}.ff.1", d, f)
        linear(f"{prefix}.ff.2", f, d)

    linear("in_proj", d, d)
    if cfg.use_box_encoding:
        linear("box_proj", 4, d)
    for i in range(cfg.enc_layers):
        block(f"enc{i}", cross=False)
    for i in range(cfg.dec_layers):
        block(f"dec{i}", cross=True)
    ln("out.ln")
    linear("out_proj", d, d)
    return params


def _ln(params: Parameters, prefix: str, x: Tensor, eps: float) -> Tensor:
    y = ag.layer_norm(x, eps)
    return ag.add(ag.mul(y, params[f"{prefix}.g"]), params[f"{prefix}.b"])


def _linear(params: Parameters, prefix: str, x: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _mha(params: Parameters, prefix: str, q_in: Tensor, kv_in: Tensor, heads: int) -> Tensor:
    b, n, d = q_in.shape
    m = kv_in.shape[1]
    dh = d // heads

    def split(t: Tensor, length: int) -> Tensor:
        return ag.transpose(ag.reshape(t, (b, length, heads, dh)), (0, 2, 1, 3))

    q = split(_linear(params, f"{prefix}.q", q_in), n)
    k = split(_linear(params, f"{prefix}.k", kv_in), m)
    v = split(_linear(params, f"{prefix}.v", kv_in), m)
    att = ag.scaled_dot_attention(q, k, v)
    merged = ag.reshape(ag.transpose(att, (0, 2, 1, 3)), (b, n, d))
    return _linear(params, f"{prefix}.o", merged)


def _ff(params: Parameters, prefix: str, x: Tensor) -> Tensor:
    return _linear(params, f"{prefix}.2", ag.relu(_linear(params, f"{prefix}.1", x)))


def normalized_box_inputs(boxes: list[PatchBox], image_side: int) -> np.ndarray:
    """(cx, cy, w, h) in [0,1] units for the optional geometry encoding."""
    a = float(image_side)
    return np.array(
        [
            [(b.x0 + b.x1) / (2 * a), (b.y0 + b.y1) / (2 * a), b.width / a, b.height / a]
            for b in boxes
        ]
    )


def fuse_forward(
    params: Parameters,
    cfg: FusionConfig,
    patch_feats: Tensor,
    image_feats: Tensor,
    box_inputs: Tensor | None = None,
) -> Tensor:
    """(b,p,d) patch tokens + (b,d) whole-image target -> (b,d) unit vectors."""
    if patch_feats.ndim != 3 or image_feats.ndim != 2:
        raise ShapeError("fuse", patch_feats.shape, image_feats.shape)
    b, p, d = patch_feats.shape
    if d != cfg.dim or image_feats.shape != (b, d):
        raise ShapeError("fuse", patch_feats.shape, image_feats.shape, (cfg.dim,))
    eps = cfg.ln_eps

    x = _linear(params, "in_proj", patch_feats)
    if cfg.use_box_encoding:
        if box_inputs is None:
            raise ConfigError("use_box_encoding=True requires patch boxes")
        x = ag.add(x, _linear(params, "box_proj", box_inputs))
    for i in range(cfg.enc_layers):
        pre = f"enc{i}"
        h = _ln(params, f"{pre}.ln1", x, eps)
        x = ag.add(x, _mha(params, f"{pre}.attn", h, h, cfg.heads))
        x = ag.add(x, _ff(params, f"{pre}.ff", _ln(params, f"{pre}.ln2", x, eps)))

    y = _linear(params, "in_proj", ag.reshape(image_feats, (b, 1, d)))
    for i in range(cfg.dec_layers):
        pre = f"dec{i}"
        h = _ln(params, f"{pre}.ln1", y, eps)
        y = ag.add(y, _mha(params, f"{pre}.attn", h, h, cfg.heads))
        y = ag.add(y, _mha(params, f"{pre}.xattn", _ln(params, f"{pre}.ln_x", y, eps), x, cfg.heads))
        y = ag.add(y, _ff(params, f"{pre}.ff", _ln(params, f"{pre}.ln2", y, eps)))

    out = _linear(params, "out_proj", _ln(params, "out.ln", ag.reshape(y, (b, d)), eps))
    return ag.l2_normalize(out, axis=-1)


def query_proxy_loss(fused: Tensor, patch_feats: Tensor, text_feats: Tensor) -> Tensor:
    """MSE between text-to-fused and text-to-best-patch cosine matrices.

    All inputs are assumed L2-normalized, so plain dot products are cosines.
    """
    if patch_feats.ndim != 3 or fused.ndim != 2 or text_feats.ndim != 2:
        raise ShapeError("query_proxy_loss", fused.shape, patch_feats.shape, text_feats.shape)
    b, p, d = patch_feats.shape
    t = text_feats.shape[0]
    if t == 0 or p == 0 or b == 0:
        raise ShapeError("query_proxy_loss", fused.shape, patch_feats.shape, text_feats.shape)
    if fused.shape != (b, d) or text_feats.shape[1] != d:
        raise ShapeError("query_proxy_loss", fused.shape, patch_feats.shape, text_feats.shape)
    flat = ag.reshape(patch_feats, (b * p, d))
    s_patch = ag.max_along(ag.reshape(ag.matmul(text_feats, ag.transpose(flat, (1, 0))), (t, b, p)), axis=-1)
    s_fused = ag.matmul(text_feats, ag.transpose(fused, (1, 0)))
    return ag.mse(s_fused, s_patch)


@dataclass
class FusionModel:
    config: FusionConfig
    params: Parameters

    @classmethod
    def create(cls, config: FusionConfig, seed: int = 0) -> "FusionModel":
        return cls(config, _init_params(config, seed))

    def parameter_count(self) -> int:
        return self.params.count()

    def fuse(
        self,
        patch_feats: np.ndarray,
        image_feats: np.ndarray,
        boxes: list[PatchBox] | None = None,
        image_side: int | None = None,
    ) -> np.ndarray:
        """Numpy front-end; accepts one image (p,d)+(d,) or a batch (b,p,d)+(b,d)."""
        patch_feats = np.asarray(patch_feats, dtype=np.float64)
        image_feats = np.asarray(image_feats, dtype=np.float64)
        single = patch_feats.ndim == 2
        if single:
            patch_feats = patch_feats[None]
            image_feats = image_feats[None]
        box_t = None
        if self.config.use_box_encoding:
            if boxes is None or image_side is None:
                raise ConfigError("use_box_encoding=True requires boxes and image_side")
            raw = normalized_box_inputs(boxes, image_side)
            box_t = Tensor(np.broadcast_to(raw, patch_feats.shape[:2] + (4,)).copy())
        out = fuse_forward(self.params, self.config, Tensor(patch_feats), Tensor(image_feats), box_t)
        return out.data[0] if single else out.data

    def save(self, path: str | Path):
        cfg = self.config
        meta = np.array(
            [cfg.dim, cfg.enc_layers, cfg.dec_layers, cfg.heads, cfg.ff,
             float(cfg.use_box_encoding), cfg.ln_eps],
            dtype=np.float64,
        )
        blob = Parameters()
        blob[CONFIG_PARAM] = Tensor(meta)
        blob.update(self.params)
        save_params(blob, path)

    @classmethod
    def load(cls, path: str | Path) -> "FusionModel":
        blob = load_params(path)
        if CONFIG_PARAM not in blob:
            raise ConfigError(f"checkpoint {path} lacks the architecture record")
        meta = blob.pop(CONFIG_PARAM).data
        cfg = FusionConfig(
            dim=int(meta[0]),
            enc_layers=int(meta[1]),
            dec_layers=int(meta[2]),
            heads=int(meta[3]),
            ff_dim=None if int(meta[4]) == 4 * int(meta[0]) else int(meta[4]),
            use_box_encoding=bool(meta[5]),
            ln_eps=float(meta[6]),
        )
        return cls(cfg, blob)


def train(
    model: FusionModel,
    patch_feats: np.ndarray,
    image_feats: np.ndarray,
    text_feats: np.ndarray,
    cfg: TrainConfig,
    boxes: list[PatchBox] | None = None,
    image_side: int | None = None,
) -> list[float]:
    """Train in place; returns the per-epoch mean loss curve.

    Every batch is scored against ALL class text features (image-agnostic
    weak supervision); schedule = linear warmup, then step decay.
    """
    patch_feats = np.asarray(patch_feats, dtype=np.float64)
    image_feats = np.asarray(image_feats, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    if patch_feats.ndim != 3 or len(patch_feats) != len(image_feats):
        raise ShapeError("train", patch_feats.shape, image_feats.shape)
    if len(patch_feats) == 0 or len(text_feats) == 0:
        raise ConfigError("train needs a nonempty feature bank and text bank")
    if patch_feats.shape[2] != model.config.dim or text_feats.shape[1] != model.config.dim:
        raise ShapeError("train", patch_feats.shape, text_feats.shape, (model.config.dim,))

    box_raw = None
    if model.config.use_box_encoding:
        if boxes is None or image_side is None:
            raise ConfigError("use_box_encoding=True requires boxes and image_side")
        box_raw = normalized_box_inputs(boxes, image_side)

    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    text_t = Tensor(text_feats)
    n = len(patch_feats)
    step = 0
    curve: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            patch_t = Tensor(patch_feats[idx])
            box_t = None
            if box_raw is not None:
                box_t = Tensor(np.broadcast_to(box_raw, (len(idx),) + box_raw.shape).copy())
            fused = fuse_forward(model.params, model.config, patch_t, Tensor(image_feats[idx]), box_t)
            loss = query_proxy_loss(fused, patch_t, text_t)
            model.params.zero_grad()
            loss.backward()
            clip_grad_value(model.params, cfg.grad_clip)
            warm = min(1.0, (step + 1) / max(1, cfg.warmup_steps))
            decay = cfg.lr_gamma ** (step // cfg.lr_step)
            opt.step(cfg.lr * warm * decay)
            losses.append(float(loss.data))
            step += 1
        curve.append(float(np.mean(losses)))
    return curve

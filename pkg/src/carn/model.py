"""The full regression network: stem conv, six amplifier units interleaved
with max pooling, a 1x1 fusion conv, global average pooling, and a linear
head predicting all 30 height indices jointly.

A plain-CNN baseline variant swaps each amplifier unit for a 3x3
conv+bn+relu with the same output channel count, so both variants have
identical layer-by-layer shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .amplifier import AUParams, au_forward
from .tensor import BatchNormState, Tensor

N_UNITS = 6
N_POOLS = 5
OUTPUT_DIM = 30


@dataclass(frozen=True)
class CARNConfig:
    """Architecture hyperparameters.

    ``input_hw`` must be divisible by 64 (one stride-2 stem plus five 2x2
    pools). ``au_cl_schedule`` gives the widening c_l of each of the six
    units. ``variant`` selects the amplifier network or the plain-CNN
    baseline.
    """

    input_hw: tuple = (128, 64)
    stem_channels: int = 8
    au_cl_schedule: tuple = (8, 8, 16, 16, 32, 32)
    head_channels: int = 64
    d: int = OUTPUT_DIM
    variant: str = "carn"

    def __post_init__(self):
        object.__setattr__(self, "input_hw", tuple(int(v) for v in self.input_hw))
        object.__setattr__(
            self, "au_cl_schedule", tuple(int(v) for v in self.au_cl_schedule)
        )
        h, w = self.input_hw
        if h % 64 or w % 64 or h <= 0 or w <= 0:
            raise ValueError(f"input_hw must be positive and divisible by 64, got {h}x{w}")
        if len(self.au_cl_schedule) != N_UNITS:
            raise ValueError(
                f"au_cl_schedule needs exactly {N_UNITS} entries, got {len(self.au_cl_schedule)}"
            )
        if any(c <= 0 for c in self.au_cl_schedule):
            raise ValueError("au_cl_schedule entries must be positive")
        if self.stem_channels <= 0:
            raise ValueError(f"stem_channels must be positive, got {self.stem_channels}")
        if self.head_channels <= 0:
            raise ValueError(f"head_channels must be positive, got {self.head_channels}")
        if self.d <= 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.variant not in ("carn", "cnn-baseline"):
            raise ValueError(f"variant must be 'carn' or 'cnn-baseline', got {self.variant!r}")

    def channel_trace(self):
        """Output channels after the stem and after each unit (both variants)."""
        trace = [self.stem_channels]
        c = self.stem_channels
        for cl in self.au_cl_schedule:
            c += cl
            trace.append(c)
        return trace

    def to_dict(self):
        return {
            "input_hw": list(self.input_hw),
            "stem_channels": self.stem_channels,
            "au_cl_schedule": list(self.au_cl_schedule),
            "head_channels": self.head_channels,
            "d": self.d,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_hw=tuple(d["input_hw"]),
            stem_channels=d["stem_channels"],
            au_cl_schedule=tuple(d["au_cl_schedule"]),
            head_channels=d["head_channels"],
            d=d["d"],
            variant=d["variant"],
        )


class BaselineBlockParams:
    """Plain conv 3x3 + bn + relu standing in for an amplifier unit."""

    def __init__(self, w, b, bn_gamma, bn_beta, bn_state):
        self.w = w
        self.b = b
        self.bn_gamma = bn_gamma
        self.bn_beta = bn_beta
        self.bn_state = bn_state

    @classmethod
    def initialize(cls, c_in, c_out, rng, dtype=T.STANDARD_DTYPE):
        fan = c_in * 9
        w = Tensor(rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / fan), dtype)
        return cls(
            w, Tensor(np.zeros(c_out), dtype),
            Tensor(np.ones(c_out), dtype), Tensor(np.zeros(c_out), dtype),
            BatchNormState(c_out, dtype),
        )

    def trainable(self):
        return {"w": self.w, "b": self.b, "bn.gamma": self.bn_gamma, "bn.beta": self.bn_beta}

    def states(self):
        return {"bn": self.bn_state}

    def astype(self, dtype):
        return BaselineBlockParams(
            Tensor(self.w.data.astype(dtype)), Tensor(self.b.data.astype(dtype)),
            Tensor(self.bn_gamma.data.astype(dtype)), Tensor(self.bn_beta.data.astype(dtype)),
            self.bn_state.astype(dtype),
        )

    def forward(self, x, mode):
        y = T.conv2d(x, self.w, self.b, stride=1, padding="same")
        return T.relu(T.batchnorm(y, self.bn_gamma, self.bn_beta, self.bn_state, mode))


@dataclass
class ModelParams:
    """All learnable tensors and batch-norm states of one model instance."""

    config: CARNConfig
    stem_w: Tensor
    stem_b: Tensor
    blocks: list
    fuse_w: Tensor
    fuse_b: Tensor
    head_w: Tensor
    head_b: Tensor

    def trainable(self):
        out = {"stem.w": self.stem_w, "stem.b": self.stem_b}
        prefix = "au" if self.config.variant == "carn" else "block"
        for i, blk in enumerate(self.blocks, start=1):
            for name, t in blk.trainable().items():
                out[f"{prefix}{i}.{name}"] = t
        out["fuse.w"] = self.fuse_w
        out["fuse.b"] = self.fuse_b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def states(self):
        prefix = "au" if self.config.variant == "carn" else "block"
        out = {}
        for i, blk in enumerate(self.blocks, start=1):
            for name, st in blk.states().items():
                out[f"{prefix}{i}.{name}"] = st
        return out

    def regularized(self):
        """Conv kernels and dense weights (no biases, no bn parameters)."""
        named = self.trainable()
        return [t for name, t in named.items()
                if name.endswith((".w", ".w_l", ".w_g")) and t.data.ndim > 1]

    def astype(self, dtype):
        return ModelParams(
            config=self.config,
            stem_w=Tensor(self.stem_w.data.astype(dtype)),
            stem_b=Tensor(self.stem_b.data.astype(dtype)),
            blocks=[blk.astype(dtype) for blk in self.blocks],
            fuse_w=Tensor(self.fuse_w.data.astype(dtype)),
            fuse_b=Tensor(self.fuse_b.data.astype(dtype)),
            head_w=Tensor(self.head_w.data.astype(dtype)),
            head_b=Tensor(self.head_b.data.astype(dtype)),
        )


def build_model(config, seed, dtype=T.STANDARD_DTYPE):
    """Deterministically initialize ModelParams from a seed.

    Layer sequence: stem conv 7x7/2 -> [unit -> maxpool] x5 -> unit ->
    conv 1x1 -> global average pool -> linear head.
    """
    rng = np.random.default_rng(seed)
    stem_w = Tensor(
        rng.standard_normal((config.stem_channels, 1, 7, 7)) * np.sqrt(2.0 / 49.0), dtype
    )
    stem_b = Tensor(np.zeros(config.stem_channels), dtype)

    blocks = []
    c = config.stem_channels
    for cl in config.au_cl_schedule:
        if config.variant == "carn":
            blocks.append(AUParams.initialize(c, cl, rng, dtype))
        else:
            blocks.append(BaselineBlockParams.initialize(c, c + cl, rng, dtype))
        c += cl

    fan_fuse = c
    fuse_w = Tensor(
        rng.standard_normal((config.head_channels, c, 1, 1))
        * np.sqrt(2.0 / (fan_fuse + config.head_channels)),
        dtype,
    )
    fuse_b = Tensor(np.zeros(config.head_channels), dtype)
    head_w = Tensor(
        rng.standard_normal((config.d, config.head_channels))
        * np.sqrt(2.0 / (config.head_channels + config.d)),
        dtype,
    )
    head_b = Tensor(np.zeros(config.d), dtype)
    return ModelParams(config, stem_w, stem_b, blocks, fuse_w, fuse_b, head_w, head_b)


def _check_batch(params, batch, mode):
    cfg = params.config
    if batch.data.ndim != 4 or batch.data.shape[1] != 1:
        raise ValueError("expected a (B, 1, H, W) batch")
    if batch.data.shape[2:] != cfg.input_hw:
        raise ValueError(
            f"batch spatial dims {batch.data.shape[2:]} do not match "
            f"configured input {cfg.input_hw}"
        )
    if mode == "train" and batch.data.shape[0] < 2:
        raise ValueError("train mode requires batch size >= 2")


def embedding(params, batch, mode="infer"):
    """The pooled feature vector h(x) feeding the linear head: (B, head_channels)."""
    _check_batch(params, batch, mode)
    x = T.conv2d(batch, params.stem_w, params.stem_b, stride=2, padding="same")
    for i, blk in enumerate(params.blocks):
        if params.config.variant == "carn":
            x = au_forward(x, blk, mode)
        else:
            x = blk.forward(x, mode)
        if i < N_POOLS:
            x = T.maxpool2(x)
    x = T.conv2d(x, params.fuse_w, params.fuse_b, stride=1, padding="same")
    return T.global_avg_pool(x)


def forward(params, batch, mode="infer"):
    """Predict height indices in millimetres: (B, d), no head activation."""
    h = embedding(params, batch, mode)
    return T.dense(h, params.head_w, params.head_b)

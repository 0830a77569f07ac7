"""The pattern recognizer: a four-block CNN with an optional attention stage.

Three variants share the convolutional trunk. ``basic`` goes straight from
the trunk to the head; ``cbam5`` and ``cbam7`` insert a channel-then-spatial
attention block after the last conv, differing only in the spatial kernel
size. The narrower 5x5 kernel targets the thin nodal lines that carry the
class information.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural as nn
from .neural import Tensor

__all__ = [
    "ModelConfig",
    "PatternClassifier",
    "build_model",
    "channel_attention",
    "spatial_attention",
    "cbam",
]

VARIANTS = ("basic", "cbam5", "cbam7")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "cbam5"
    image_size: int = 224
    channel_widths: tuple[int, int, int, int] = (32, 64, 128, 256)
    num_classes: int = 15
    cbam_reduction: int = 16
    dropout_p: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.image_size % 8:
            raise ValueError("image_size must be divisible by 8 (three 2x pools)")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if len(self.channel_widths) != 4:
            raise ValueError("expected four channel widths")
        if self.variant != "basic" and self.channel_widths[3] % self.cbam_reduction:
            raise ValueError("attention reduction must divide the last channel width")
        object.__setattr__(self, "channel_widths", tuple(self.channel_widths))

    @property
    def spatial_kernel(self) -> int | None:
        return {"basic": None, "cbam5": 5, "cbam7": 7}[self.variant]

    @property
    def head_pool(self) -> int:
        # Trunk output is (image_size / 8)^2; the head pools to at most 4x4.
        return min(4, self.image_size // 8)

    @property
    def head_inputs(self) -> int:
        return self.head_pool**2 * self.channel_widths[3]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "image_size": self.image_size,
            "channel_widths": list(self.channel_widths),
            "num_classes": self.num_classes,
            "cbam_reduction": self.cbam_reduction,
            "dropout_p": self.dropout_p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["channel_widths"] = tuple(d["channel_widths"])
        return cls(**d)


def channel_attention(f: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Per-channel gate: sigmoid of a shared bottleneck MLP applied to both
    the average-pooled and max-pooled channel descriptors, summed."""
    n, c = f.data.shape[0], f.data.shape[1]

    def path(pooled):
        h = nn.linear(nn.reshape(pooled, (n, c)), w1, b1)
        return nn.linear(nn.relu(h), w2, b2)

    gate = nn.add(path(nn.global_avg_pool(f)), path(nn.global_max_pool(f)))
    return nn.reshape(nn.sigmoid(gate), (n, c, 1, 1))


def spatial_attention(f: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-position gate: sigmoid of a single conv over the channel-wise
    mean and max maps; kernel size is odd so the footprint stays centered."""
    kernel = w.data.shape[2]
    if kernel % 2 == 0:
        raise ValueError("spatial attention kernel must be odd")
    pooled = nn.concat_channels(nn.channel_mean(f), nn.channel_max(f))
    return nn.sigmoid(nn.conv2d(pooled, w, b, padding=(kernel - 1) // 2))


def cbam(f: Tensor, ca_w1: Tensor, ca_b1: Tensor, ca_w2: Tensor, ca_b2: Tensor,
         sa_w: Tensor, sa_b: Tensor) -> Tensor:
    """Channel gate then spatial gate, each multiplied into the features."""
    f = nn.mul(channel_attention(f, ca_w1, ca_b1, ca_w2, ca_b2), f)
    return nn.mul(spatial_attention(f, sa_w, sa_b), f)


class PatternClassifier:
    """Trunk: Conv3x3 -> ReLU -> MaxPool (x3), Conv3x3 -> ReLU.
    Then optional CBAM, adaptive average pool, and a two-layer head."""

    def __init__(self, config: ModelConfig, seed: int = 0,
                 dtype: np.dtype = np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        cw = config.channel_widths
        p: dict[str, Tensor] = {}

        def kaiming(name, shape, fan_in):
            bound = np.sqrt(6.0 / fan_in)
            p[name] = Tensor(rng.uniform(-bound, bound, size=shape).astype(self.dtype),
                             requires_grad=True)

        def zeros(name, shape):
            p[name] = Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)

        chans = [3, *cw]
        for i in range(4):
            kaiming(f"conv{i + 1}.w", (chans[i + 1], chans[i], 3, 3), chans[i] * 9)
            zeros(f"conv{i + 1}.b", (chans[i + 1],))
        if config.variant != "basic":
            c, r = cw[3], config.cbam_reduction
            kaiming("cbam.mlp1.w", (c, c // r), c)
            zeros("cbam.mlp1.b", (c // r,))
            kaiming("cbam.mlp2.w", (c // r, c), c // r)
            zeros("cbam.mlp2.b", (c,))
            k = config.spatial_kernel
            kaiming("cbam.spatial.w", (1, 2, k, k), 2 * k * k)
            zeros("cbam.spatial.b", (1,))
        kaiming("head1.w", (config.head_inputs, 512), config.head_inputs)
        zeros("head1.b", (512,))
        kaiming("head2.w", (512, config.num_classes), 512)
        zeros("head2.b", (config.num_classes,))
        self.params = p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def load_params(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ValueError("parameter names do not match the model config")
        for name, arr in arrays.items():
            if arr.shape != self.params[name].data.shape:
                raise ValueError(f"shape mismatch for parameter {name!r}")
            self.params[name].data = arr.astype(self.dtype)

    def forward(self, x, training: bool = False, dropout_seed: int = 0) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        p = self.params
        for i in (1, 2, 3):
            x = nn.maxpool2(nn.relu(nn.conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"],
                                              padding=1)))
        x = nn.relu(nn.conv2d(x, p["conv4.w"], p["conv4.b"], padding=1))
        if self.config.variant != "basic":
            x = cbam(x, p["cbam.mlp1.w"], p["cbam.mlp1.b"],
                     p["cbam.mlp2.w"], p["cbam.mlp2.b"],
                     p["cbam.spatial.w"], p["cbam.spatial.b"])
        x = nn.flatten(nn.adaptive_avg_pool(x, self.config.head_pool))
        x = nn.relu(nn.linear(x, p["head1.w"], p["head1.b"]))
        x = nn.dropout(x, self.config.dropout_p, training, dropout_seed)
        return nn.linear(x, p["head2.w"], p["head2.b"])

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode forward returning plain logits."""
        return self.forward(x, training=False).data


def build_model(config: ModelConfig, seed: int = 0,
                dtype: np.dtype = np.float32) -> PatternClassifier:
    return PatternClassifier(config, seed=seed, dtype=dtype)

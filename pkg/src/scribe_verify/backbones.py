"""Embedding networks mapping a normalized ``[N, 3, H, W]`` batch to ``[N, embedding_dim]``.

Two families are provided:

* ``cnn-mini``: a MobileNetV3-style stack of inverted bottlenecks with
  depthwise 3x3 convolutions, followed by a 1x1 conv to a 160-channel
  bottleneck, global average pooling and a linear embedding layer.
* ``vit-lite``: a small pre-norm vision transformer over non-overlapping
  patches with a class token whose final state is projected to the embedding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .layers import BatchNorm, Conv2d, LayerNorm, Linear, Module, Parameter, trunc_normal
from .tensor import Tensor, broadcast_to, concat, sqrt, swapaxes

ARCHITECTURES = ("cnn-mini", "vit-lite")


@dataclass
class CnnMiniConfig:
    stem_channels: int = 16
    # (expansion, out_channels, stride)
    blocks: list[tuple[int, int, int]] = field(default_factory=lambda: [(4, 24, 2), (4, 40, 2), (4, 80, 2)])
    bottleneck_channels: int = 160
    embedding_dim: int = 10
    l2_normalize: bool = False

    def __post_init__(self):
        self.blocks = [tuple(int(v) for v in b) for b in self.blocks]
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")
        if self.bottleneck_channels <= self.embedding_dim:
            raise ValueError("bottleneck_channels must exceed embedding_dim")
        for _, _, stride in self.blocks:
            if stride not in (1, 2):
                raise ValueError(f"block stride must be 1 or 2, got {stride}")


@dataclass
class VitLiteConfig:
    patch_size: int = 8
    model_dim: int = 64
    heads: int = 4
    layers: int = 4
    mlp_ratio: int = 2
    embedding_dim: int = 10
    l2_normalize: bool = False

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")


class EmbeddingNet(Module):
    """Common surface of both backbones."""

    arch: str = ""

    def __init__(self, config, input_size: tuple[int, int]):
        super().__init__()
        self.config = config
        self.input_size = (int(input_size[0]), int(input_size[1]))
        self.embedding_dim = config.embedding_dim

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != self.input_size:
            raise ValueError(
                f"{self.arch} built for [N, 3, {self.input_size[0]}, {self.input_size[1]}], got {list(x.shape)}"
            )

    def embed(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(x)
        out = self.embed(x)
        if self.config.l2_normalize:
            out = out / sqrt((out * out).sum(axis=1, keepdims=True) + 1e-12)
        return out

    def config_dict(self) -> dict:
        return asdict(self.config)


# ------------------------------------------------------------------ cnn-mini
class ConvBN(Module):
    def __init__(self, cin, cout, kernel, rng, stride=1, groups=1, act=True):
        super().__init__()
        self.conv = Conv2d(cin, cout, kernel, rng, stride=stride, padding=kernel // 2, groups=groups)
        self.bn = BatchNorm(cout)
        self.act = act

    def forward(self, x):
        y = self.bn(self.conv(x))
        return F.hardswish(y) if self.act else y


class InvertedBottleneck(Module):
    """expand 1x1 -> depthwise 3x3 -> project 1x1, residual when shapes allow."""

    def __init__(self, cin: int, expansion: int, cout: int, stride: int, rng):
        super().__init__()
        hidden = cin * expansion
        self.expand = ConvBN(cin, hidden, 1, rng) if expansion != 1 else None
        self.depthwise = ConvBN(hidden, hidden, 3, rng, stride=stride, groups=hidden)
        self.project = ConvBN(hidden, cout, 1, rng, act=False)
        self.residual = stride == 1 and cin == cout

    def forward(self, x):
        y = self.expand(x) if self.expand is not None else x
        y = self.project(self.depthwise(y))
        return x + y if self.residual else y


class CnnMini(EmbeddingNet):
    arch = "cnn-mini"

    def __init__(self, config: CnnMiniConfig, input_size, rng: np.random.Generator):
        super().__init__(config, input_size)
        h, w = self.input_size
        h, w = F.conv_output_size(h, 3, 2, 1), F.conv_output_size(w, 3, 2, 1)
        for _, _, stride in config.blocks:
            h, w = F.conv_output_size(h, 3, stride, 1), F.conv_output_size(w, 3, stride, 1)
        if min(self.input_size) < 1 or h < 1 or w < 1:
            raise ValueError(f"input {self.input_size} collapses below 1x1 in cnn-mini")

        self.stem = ConvBN(3, config.stem_channels, 3, rng, stride=2)
        blocks = []
        cin = config.stem_channels
        for expansion, cout, stride in config.blocks:
            blocks.append(InvertedBottleneck(cin, expansion, cout, stride, rng))
            cin = cout
        self.blocks = blocks
        self.head = ConvBN(cin, config.bottleneck_channels, 1, rng)
        self.fc = Linear(config.bottleneck_channels, config.embedding_dim, rng)

    def embed(self, x):
        y = self.stem(x)
        for block in self.blocks:
            y = block(y)
        return self.fc(F.global_avg_pool(self.head(y)))


# ------------------------------------------------------------------ vit-lite
class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng):
        super().__init__()
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.scale = (dim // heads) ** -0.5
        self.keep_attention = False
        self.last_attention: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        n, length, dim = x.shape
        hd = dim // self.heads
        qkv = self.qkv(x).reshape(n, length, 3, self.heads, hd).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = F.softmax((q @ swapaxes(k, -1, -2)) * self.scale, axis=-1)
        if self.keep_attention:
            self.last_attention = attn.data.copy()
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(n, length, dim)
        return self.proj(out)


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, dim * mlp_ratio, rng)
        self.fc2 = Linear(dim * mlp_ratio, dim, rng)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class VitLite(EmbeddingNet):
    arch = "vit-lite"

    def __init__(self, config: VitLiteConfig, input_size, rng: np.random.Generator):
        super().__init__(config, input_size)
        h, w = self.input_size
        p = config.patch_size
        if p < 1 or h % p or w % p:
            raise ValueError(f"input {self.input_size} not divisible by patch size {p}")
        self.num_patches = (h // p) * (w // p)
        dim = config.model_dim
        self.patch_embed = Linear(3 * p * p, dim, rng)
        self.cls_token = Parameter(trunc_normal((1, 1, dim), 0.02, rng))
        self.pos_embed = Parameter(trunc_normal((1, self.num_patches + 1, dim), 0.02, rng))
        self.layers = [EncoderLayer(dim, config.heads, config.mlp_ratio, rng) for _ in range(config.layers)]
        self.norm = LayerNorm(dim)
        self.fc = Linear(dim, config.embedding_dim, rng)

    @property
    def sequence_length(self) -> int:
        return self.num_patches + 1

    def patchify(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        p = self.config.patch_size
        x = x.reshape(n, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(n, (h // p) * (w // p), c * p * p)

    def tokens(self, x: Tensor) -> Tensor:
        patches = self.patch_embed(self.patchify(x))
        cls = broadcast_to(self.cls_token, (x.shape[0], 1, self.config.model_dim))
        return concat([cls, patches], axis=1) + self.pos_embed

    def keep_attention(self, flag: bool = True) -> None:
        for layer in self.layers:
            layer.attn.keep_attention = flag

    def attention_maps(self) -> list[np.ndarray]:
        """Attention weights ``[N, heads, L, L]`` of the last forward, per layer."""
        return [layer.attn.last_attention for layer in self.layers]

    def embed(self, x):
        y = self.tokens(x)
        for layer in self.layers:
            y = layer(y)
        return self.fc(self.norm(y[:, 0, :]))


# ------------------------------------------------------------------ builders
def build_cnn_mini(cfg: CnnMiniConfig | None = None, input_size=(64, 64), seed: int = 42) -> CnnMini:
    return CnnMini(cfg or CnnMiniConfig(), input_size, np.random.default_rng(seed))


def build_vit_lite(cfg: VitLiteConfig | None = None, input_size=(64, 64), seed: int = 42) -> VitLite:
    return VitLite(cfg or VitLiteConfig(), input_size, np.random.default_rng(seed))


def build_backbone(arch: str, config: dict | None = None, input_size=(64, 64), seed: int = 42) -> EmbeddingNet:
    """Build a backbone from its tag and a plain config mapping."""
    config = dict(config or {})
    if arch == "cnn-mini":
        return build_cnn_mini(CnnMiniConfig(**config), input_size, seed)
    if arch == "vit-lite":
        return build_vit_lite(VitLiteConfig(**config), input_size, seed)
    raise ValueError(f"unknown backbone {arch!r}; expected one of {ARCHITECTURES}")

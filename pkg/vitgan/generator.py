"""
The fusion generator: encoder -> fusion with the global embedding -> decoder.

Shapes for an H x W luminance input (H, W multiples of 32)::

    encode   N x 1 x H x W        -> N x 512 x H/32 x W/32   (10 convs, 5 pools)
    fuse     N x 512 x h x w, N x 1000 -> N x 512 x h x w    (tile, concat 1512, 1x1 conv)
    decode   N x 512 x h x w      -> N x 2 x H x W           (5 upsample + conv-transpose)

Without an extractor (the ViT-GAN variant) the fusion layer projects the raw
encoding and the extractor is never called.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from .colorspace import (
    GamutCounter,
    LabImage,
    RgbImage,
    denormalize_ab,
    lab_to_srgb,
    normalize_for_generator,
    srgb_to_lab,
)
from .exceptions import ConfigError, ShapeError
from .feature_extractor import EMBED_DIM, EmbeddingExtractor
from .substrate import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    avg_pool2,
    leaky_relu,
    normal_,
    relu,
    tanh,
    upsample_nearest2,
)

DOWNSAMPLE = 32
VIT_GAN = "vit-gan"
VIT_I_GAN = "vit-i-gan"
VARIANTS = (VIT_GAN, VIT_I_GAN)


@dataclass(frozen=True)
class GeneratorConfig:
    encoder_channels: Tuple[int, ...] = (64, 128, 256, 512, 512)
    # Output widths of the first four decoder stages; the fifth emits a, b.
    decoder_channels: Tuple[int, ...] = (256, 128, 64, 32)
    embed_dim: int = EMBED_DIM
    variant: str = VIT_I_GAN
    leaky_slope: float = 0.2

    def __post_init__(self):
        if len(self.encoder_channels) != 5:
            raise ConfigError("generator.encoder_channels needs exactly 5 stages")
        if len(self.decoder_channels) != 4:
            raise ConfigError("generator.decoder_channels needs exactly 4 hidden stages")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def fused(self) -> bool:
        return self.variant == VIT_I_GAN

    def reduced(self, divisor: int = 8) -> "GeneratorConfig":
        return GeneratorConfig(
            encoder_channels=tuple(max(1, c // divisor) for c in self.encoder_channels),
            decoder_channels=tuple(max(1, c // divisor) for c in self.decoder_channels),
            embed_dim=self.embed_dim,
            variant=self.variant,
            leaky_slope=self.leaky_slope,
        )


class EncoderStage(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 5, padding=2, bias=False)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 5, padding=2, bias=False)
        self.bn2 = BatchNorm2d(out_channels)

    def forward(self, x):
        x = relu(self.bn1(self.conv1(x)))
        x = relu(self.bn2(self.conv2(x)))
        return avg_pool2(x)


class Encoder(nn.Module):
    def __init__(self, channels):
        super().__init__()
        widths = (1,) + tuple(channels)
        for i, (c_in, c_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            self.add_module(f"stage{i}", EncoderStage(c_in, c_out))

    def forward(self, L):
        if L.dim() != 4 or L.shape[1] != 1:
            raise ShapeError(f"encoder expects N x 1 x H x W, got {tuple(L.shape)}")
        if L.shape[2] % DOWNSAMPLE or L.shape[3] % DOWNSAMPLE:
            raise ShapeError(
                f"encoder input extents must be multiples of {DOWNSAMPLE}, got {tuple(L.shape)}"
            )
        x = L
        for stage in self.children():
            x = stage(x)
        return x


def tile_and_concat(enc: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
    """Replicate ``emb`` over every spatial position of ``enc`` and stack on channels."""
    if emb.dim() != 2:
        raise ShapeError(f"embedding must be N x D, got {tuple(emb.shape)}")
    if emb.shape[0] != enc.shape[0]:
        raise ShapeError(
            f"axis 0 (batch): encoding has {enc.shape[0]} items, embedding has {emb.shape[0]}"
        )
    h, w = enc.shape[2], enc.shape[3]
    tiled = emb[:, :, None, None].expand(-1, -1, h, w)
    return torch.cat([enc, tiled], dim=1)


class FusionLayer(nn.Module):
    def __init__(self, channels, embed_dim=0):
        super().__init__()
        self.embed_dim = embed_dim
        self.project = Conv2d(channels + embed_dim, channels, 1, bias=False)
        self.bn = BatchNorm2d(channels)

    def forward(self, enc, emb=None):
        if self.embed_dim:
            if emb is None:
                raise ShapeError("fusion layer expects an embedding")
            if emb.dim() != 2 or emb.shape[1] != self.embed_dim:
                raise ShapeError(
                    f"axis 1 (embedding): expected {self.embed_dim} features, got {tuple(emb.shape)}"
                )
            enc = tile_and_concat(enc, emb)
        return relu(self.bn(self.project(enc)))


class DecoderStage(nn.Module):
    def __init__(self, in_channels, out_channels, slope=0.2):
        super().__init__()
        self.slope = slope
        self.deconv = ConvTranspose2d(in_channels, out_channels, 3, padding=1, bias=False)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x):
        return leaky_relu(self.bn(self.deconv(upsample_nearest2(x))), self.slope)


class OutputStage(nn.Module):
    def __init__(self, in_channels):
        super().__init__()
        self.deconv = ConvTranspose2d(in_channels, 2, 3, padding=1)

    def forward(self, x):
        return tanh(self.deconv(upsample_nearest2(x)))


class Decoder(nn.Module):
    def __init__(self, in_channels, channels, slope=0.2):
        super().__init__()
        widths = (in_channels,) + tuple(channels)
        for i, (c_in, c_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            self.add_module(f"stage{i}", DecoderStage(c_in, c_out, slope))
        self.add_module(f"stage{len(widths)}", OutputStage(widths[-1]))

    def forward(self, x):
        for stage in self.children():
            x = stage(x)
        return x


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config
        width = config.encoder_channels[-1]
        self.encoder = Encoder(config.encoder_channels)
        self.fusion = FusionLayer(width, config.embed_dim if config.fused else 0)
        self.decoder = Decoder(width, config.decoder_channels, config.leaky_slope)

    def forward(self, L: torch.Tensor, extractor: Optional[EmbeddingExtractor] = None) -> torch.Tensor:
        enc = self.encoder(L)
        emb = None
        if self.config.fused:
            if extractor is None:
                raise ConfigError("the vit-i-gan generator needs a feature extractor")
            emb = extractor.embed_luminance(L).to(enc.dtype)
        return self.decoder(self.fusion(enc, emb))


def init_generator(generator: Generator, rng: torch.Generator) -> Generator:
    """Convs ~ N(0, 0.02), batch-norm gains ~ N(1, 0.02), biases and shifts 0."""
    for module in generator.modules():
        if isinstance(module, (Conv2d, ConvTranspose2d)):
            normal_(module.weight, 0.02, rng)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, BatchNorm2d):
            normal_(module.gain, 0.02, rng, mean=1.0)
            nn.init.zeros_(module.shift)
    return generator


def build_generator(config: GeneratorConfig, rng: torch.Generator) -> Generator:
    return init_generator(Generator(config), rng)


# --- Functional entry points --------------------------------------------------------

def encode(generator: Generator, L: torch.Tensor) -> torch.Tensor:
    return generator.encoder(L)


def fuse(generator: Generator, enc: torch.Tensor, emb: Optional[torch.Tensor]) -> torch.Tensor:
    return generator.fusion(enc, emb)


def decode(generator: Generator, fused: torch.Tensor) -> torch.Tensor:
    return generator.decoder(fused)


def generator_forward(
    generator: Generator,
    L: torch.Tensor,
    extractor: Optional[EmbeddingExtractor] = None,
) -> torch.Tensor:
    """N x 1 x H x W normalised L -> N x 2 x H x W normalised ab in [-1, 1]."""
    return generator(L, extractor)


def predict_lab(
    img: Union[RgbImage, np.ndarray],
    generator: Generator,
    extractor: Optional[EmbeddingExtractor] = None,
) -> LabImage:
    """Keep the input's L plane exactly and replace a, b with the prediction."""
    if not isinstance(img, RgbImage):
        img = RgbImage.from_gray(img)
    lab = srgb_to_lab(img)
    L, _ = normalize_for_generator(lab)
    dtype = next(generator.parameters()).dtype
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            ab = generator(L[None].to(dtype), extractor)[0]
    finally:
        generator.train(was_training)
    a, b = denormalize_ab(ab)
    return LabImage(L=lab.L, a=a, b=b)


def colorize(
    img: Union[RgbImage, np.ndarray],
    generator: Generator,
    extractor: Optional[EmbeddingExtractor] = None,
    counter: Optional[GamutCounter] = None,
) -> RgbImage:
    """Colourise an sRGB or 2-D grayscale image whose sides are multiples of 32."""
    return lab_to_srgb(predict_lab(img, generator, extractor), counter)

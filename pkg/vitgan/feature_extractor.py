"""
Global image embedding for the fusion layer.

The generator only needs "something that maps a 3 x 299 x 299 grayscale
image in [0, 1] to a 1000-d vector". Two backends satisfy that:

* ``stub``: a small frozen random-weight convolutional pyramid drawn from a
  seed. Every test runs on it; no weights file is needed.
* ``inception-v3``: torchvision's Inception-v3 graph with weights loaded from
  a parameter container (converted offline, see ``export_extractor``).
"""

from __future__ import annotations

import abc
import logging
import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from . import container
from .exceptions import ManifestError, ShapeError, WeightsNotLoadedError
from .substrate import Conv2d, Linear, freeze, normal_, relu

try:
    import torchvision
except ImportError:  # pragma: no cover - optional backend
    torchvision = None

logger = logging.getLogger(__name__)

EMBED_DIM = 1000
INPUT_SIZE = 299

STUB_BACKEND = "stub"
INCEPTION_BACKEND = "inception-v3"


def prepare_extractor_input(L: torch.Tensor) -> torch.Tensor:
    """Normalised L (N x 1 x H x W, [-1, 1]) -> N x 3 x 299 x 299 in [0, 1]."""
    if L.dim() != 4 or L.shape[1] != 1:
        raise ShapeError(f"expected an N x 1 x H x W luminance tensor, got shape {tuple(L.shape)}")
    x = (L + 1.0) / 2.0
    x = F.interpolate(x, size=(INPUT_SIZE, INPUT_SIZE), mode="bilinear", align_corners=False)
    return x.clamp(0.0, 1.0).repeat(1, 3, 1, 1)


class EmbeddingExtractor(abc.ABC):
    """Frozen image -> 1000-d embedding; ``calls`` counts ``embed`` invocations."""

    backend: str = ""
    embed_dim: int = EMBED_DIM

    def __init__(self, network: nn.Module, loaded: bool = True):
        self.network = freeze(network)
        self.loaded = loaded
        self.calls = 0

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        if not self.loaded:
            raise WeightsNotLoadedError(f"{self.backend} extractor: weights not loaded")
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, INPUT_SIZE, INPUT_SIZE):
            raise ShapeError(
                f"extractor input must be N x 3 x {INPUT_SIZE} x {INPUT_SIZE}, got {tuple(x.shape)}"
            )
        self.calls += 1
        param = next(self.network.parameters())
        with torch.no_grad():
            out = self._forward(x.detach().to(param.dtype))
        return out.detach().to(x.dtype)

    def embed_luminance(self, L: torch.Tensor) -> torch.Tensor:
        return self.embed(prepare_extractor_input(L))

    @abc.abstractmethod
    def _forward(self, x: torch.Tensor) -> torch.Tensor:
        ...

    def state_dict(self):
        return self.network.state_dict()

    def load_state_dict(self, tensors) -> None:
        self.network.load_state_dict(tensors, strict=True)
        freeze(self.network)
        self.loaded = True

    def to(self, dtype: torch.dtype) -> "EmbeddingExtractor":
        self.network.to(dtype)
        return self


class StubPyramid(nn.Module):
    """Four stride-2 3x3 convolutions, global average, linear to the embedding."""

    widths = (16, 32, 64, 128)

    def __init__(self, embed_dim: int = EMBED_DIM):
        super().__init__()
        channels = (3,) + self.widths
        self.convs = nn.ModuleList(
            Conv2d(c_in, c_out, 3, stride=2, padding=1)
            for c_in, c_out in zip(channels[:-1], channels[1:])
        )
        self.head = Linear(self.widths[-1], embed_dim)

    def forward(self, x):
        for conv in self.convs:
            x = relu(conv(x))
        return self.head(x.mean(dim=(2, 3)))


class StubExtractor(EmbeddingExtractor):
    backend = STUB_BACKEND

    def _forward(self, x):
        return self.network(x)


class InceptionExtractor(EmbeddingExtractor):
    """Pre-softmax ImageNet logits of Inception-v3."""

    backend = INCEPTION_BACKEND

    def _forward(self, x):
        return self.network(x)


def _inception_network(weights=None) -> nn.Module:
    if torchvision is None:
        raise WeightsNotLoadedError("the inception-v3 backend needs torchvision installed")
    return torchvision.models.inception_v3(
        weights=weights,
        aux_logits=weights is not None,
        init_weights=False,
        transform_input=False,
    )


def make_stub_extractor(seed: int = 0) -> StubExtractor:
    rng = torch.Generator().manual_seed(seed)
    network = StubPyramid()
    for name, param in network.named_parameters():
        if name.endswith("weight"):
            fan_in = param[0].numel()
            normal_(param, math.sqrt(2.0 / fan_in), rng)
        else:
            normal_(param, 0.01, rng)
    return StubExtractor(network)


def inception_from_torchvision() -> InceptionExtractor:
    """Build the inception backend from torchvision's published ImageNet weights."""
    network = _inception_network(weights="IMAGENET1K_V1")
    network.aux_logits = False
    network.AuxLogits = None
    return InceptionExtractor(network)


def export_extractor(extractor: EmbeddingExtractor, path) -> str:
    return container.save(
        path,
        extractor.state_dict(),
        manifest={"backend": extractor.backend, "embed_dim": extractor.embed_dim},
    )


def load_pretrained(path) -> EmbeddingExtractor:
    """Load an extractor from a weights container, verifying its manifest hash."""
    tensors, manifest = container.load(path, verify=True)
    if manifest.get("embed_dim") != EMBED_DIM:
        raise ManifestError(
            f"{path}: embed_dim {manifest.get('embed_dim')} does not match {EMBED_DIM}"
        )
    backend = manifest.get("backend")
    if backend == STUB_BACKEND:
        extractor: EmbeddingExtractor = StubExtractor(StubPyramid(), loaded=False)
    elif backend == INCEPTION_BACKEND:
        extractor = InceptionExtractor(_inception_network(), loaded=False)
    else:
        raise ManifestError(f"{path}: unknown extractor backend {backend!r}")
    extractor.load_state_dict(tensors)
    logger.info("Loaded %s extractor from %s", backend, path)
    return extractor


def build_extractor(backend: str, weights: str = "", seed: int = 0) -> Optional[EmbeddingExtractor]:
    """``stub`` -> seeded stub, ``pretrained`` -> weights file, ``none`` -> no extractor."""
    if backend == "none":
        return None
    if backend == STUB_BACKEND:
        return make_stub_extractor(seed)
    if backend == "pretrained":
        if not weights:
            raise WeightsNotLoadedError("pretrained extractor requested but no weights file given")
        return load_pretrained(weights)
    raise ValueError(f"unknown extractor backend {backend!r}")

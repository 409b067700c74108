"""
Vision-Transformer real/fake classifier over full (L, a, b) images.

patchify -> linear projection -> class token + positional embeddings ->
embedding dropout -> pre-norm transformer blocks -> final norm -> class-token
head -> one logit. The sigmoid lives in the loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import torch
from einops import rearrange
from torch import nn

from .exceptions import ConfigError, ShapeError
from .substrate import LayerNorm, Linear, dropout, gelu, normal_, softmax


@dataclass(frozen=True)
class VitConfig:
    image_size: int = 256
    patch_size: int = 32
    depth: int = 6
    heads: int = 16
    mlp_dim: int = 2048
    dropout: float = 0.1
    emb_dropout: float = 0.1
    token_dim: int = 1024
    in_channels: int = 3

    def __post_init__(self):
        if self.patch_size <= 0 or self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.heads <= 0 or self.token_dim % self.heads:
            raise ConfigError(f"token_dim {self.token_dim} is not divisible by heads {self.heads}")
        for name in ("dropout", "emb_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_size**2


def patchify(img: torch.Tensor, patch: int = 32) -> torch.Tensor:
    """N x C x H x W -> N x (H/p * W/p) x (C*p*p); row-major grid, channel-major patches."""
    if img.dim() != 4:
        raise ShapeError(f"patchify expects N x C x H x W, got {tuple(img.shape)}")
    if img.shape[2] % patch or img.shape[3] % patch:
        raise ShapeError(f"image {tuple(img.shape)} is not divisible into {patch} x {patch} patches")
    return rearrange(img, "n c (h p1) (w p2) -> n (h w) (c p1 p2)", p1=patch, p2=patch)


def unpatchify(tokens: torch.Tensor, patch: int, channels: int, height: int, width: int) -> torch.Tensor:
    return rearrange(
        tokens,
        "n (h w) (c p1 p2) -> n c (h p1) (w p2)",
        h=height // patch,
        w=width // patch,
        c=channels,
        p1=patch,
        p2=patch,
    )


class MultiHeadAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"token_dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.to_qkv = Linear(dim, dim * 3)
        self.to_out = Linear(dim, dim)

    def forward(self, x, return_attention=False):
        q, k, v = (
            rearrange(t, "n t (h d) -> n h t d", h=self.heads)
            for t in self.to_qkv(x).chunk(3, dim=-1)
        )
        attn = softmax(torch.matmul(q, k.transpose(-1, -2)) * self.scale, axis=-1)
        out = rearrange(torch.matmul(attn, v), "n h t d -> n t (h d)")
        out = self.to_out(out)
        return (out, attn) if return_attention else out


def multi_head_attention(tokens: torch.Tensor, attention: MultiHeadAttention, return_attention=False):
    """Scaled dot-product self-attention over N x T x D tokens."""
    if tokens.dim() != 3:
        raise ShapeError(f"attention expects N x T x D tokens, got {tuple(tokens.shape)}")
    return attention(tokens, return_attention=return_attention)


class TransformerBlock(nn.Module):
    def __init__(self, dim, heads, mlp_dim, rate):
        super().__init__()
        self.rate = rate
        self.norm1 = LayerNorm(dim)
        self.attention = MultiHeadAttention(dim, heads)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_dim)
        self.fc2 = Linear(mlp_dim, dim)

    def forward(self, x, rng=None, attentions: Optional[List[torch.Tensor]] = None):
        attended, attn = self.attention(self.norm1(x), return_attention=True)
        if attentions is not None:
            attentions.append(attn)
        x = x + dropout(attended, self.rate, self.training, rng)
        h = dropout(gelu(self.fc1(self.norm2(x))), self.rate, self.training, rng)
        h = dropout(self.fc2(h), self.rate, self.training, rng)
        return x + h


class ViTDiscriminator(nn.Module):
    def __init__(self, config: VitConfig = VitConfig()):
        super().__init__()
        self.config = config
        dim = config.token_dim
        self.patch_embedding = Linear(config.patch_dim, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embedding = nn.Parameter(torch.zeros(1, config.num_patches + 1, dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, config.heads, config.mlp_dim, config.dropout)
            for _ in range(config.depth)
        )
        self.norm = LayerNorm(dim)
        self.head = Linear(dim, 1)

    def forward(self, img, rng=None, attentions=None):
        expected = (self.config.in_channels, self.config.image_size, self.config.image_size)
        if img.dim() != 4 or tuple(img.shape[1:]) != expected:
            raise ShapeError(f"discriminator expects N x {expected}, got {tuple(img.shape)}")
        return self.forward_patches(patchify(img, self.config.patch_size), rng, attentions=attentions)

    def forward_patches(self, patches, rng=None, pos_embedding=None, attentions=None):
        """Run on already-patchified input; ``pos_embedding`` overrides the learned one."""
        pos = self.pos_embedding if pos_embedding is None else pos_embedding
        x = self.patch_embedding(patches)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + pos
        x = dropout(x, self.config.emb_dropout, self.training, rng)
        for block in self.blocks:
            x = block(x, rng, attentions)
        return self.head(self.norm(x)[:, 0])


def init_discriminator(model: ViTDiscriminator, rng: torch.Generator) -> ViTDiscriminator:
    """Linear weights, class token and positions ~ N(0, 0.02); biases 0; norms identity."""
    for module in model.modules():
        if isinstance(module, Linear):
            normal_(module.weight, 0.02, rng)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
    normal_(model.cls_token, 0.02, rng)
    normal_(model.pos_embedding, 0.02, rng)
    return model


def build_discriminator(config: VitConfig, rng: torch.Generator) -> ViTDiscriminator:
    return init_discriminator(ViTDiscriminator(config), rng)


def vit_forward(
    img: torch.Tensor,
    model: ViTDiscriminator,
    training: bool,
    rng: Optional[torch.Generator] = None,
) -> torch.Tensor:
    model.train(training)
    return model(img, rng)


def assemble_lab(L: torch.Tensor, ab: torch.Tensor) -> torch.Tensor:
    """Stack normalised L and ab into the N x 3 x H x W (L, a, b) tensor."""
    if L.shape[0] != ab.shape[0] or L.shape[2:] != ab.shape[2:]:
        raise ShapeError(f"L {tuple(L.shape)} and ab {tuple(ab.shape)} do not line up")
    return torch.cat([L, ab], dim=1)


def discriminate(
    L: torch.Tensor,
    ab: torch.Tensor,
    model: ViTDiscriminator,
    rng: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Logits (N x 1) for luminance-conditioned chroma."""
    return model(assemble_lab(L, ab), rng)

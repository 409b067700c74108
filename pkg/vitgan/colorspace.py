"""
sRGB <-> CIE L*a*b* conversion and the normalisation maps the networks use.

The conversions are ``skimage.color`` under its D65 / 2° defaults and work
per pixel, never looking at neighbours. Out-of-gamut counting compares the
linear RGB of a Lab value against the unit cube before the final clamp.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch
from skimage import color
from skimage.color.colorconv import rgb_from_xyz

from .exceptions import ShapeError

L_MAX = 100.0
AB_MAX = 128.0
_RANGE_TOLERANCE = 1e-6
# Linear-RGB slack below which a component still rounds into [0, 255].
GAMUT_TOLERANCE = 1e-4


@dataclass(frozen=True)
class RgbImage:
    """8-bit sRGB raster, ``data`` is H x W x 3 uint8."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"RgbImage needs an H x W x 3 array, got shape {data.shape}")
        if data.dtype != np.uint8:
            if data.size and (data.min() < 0 or data.max() > 255):
                raise ValueError("RgbImage values must lie in [0, 255]")
            data = data.astype(np.uint8)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_gray(cls, gray: np.ndarray) -> "RgbImage":
        gray = np.asarray(gray)
        return cls(np.repeat(gray[:, :, None], 3, axis=2))


@dataclass(frozen=True)
class LabImage:
    """Per-pixel L in [0, 100] and a, b in [-128, 128] as float64 planes."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        planes = [np.asarray(p, dtype=np.float64) for p in (self.L, self.a, self.b)]
        if planes[0].ndim != 2 or any(p.shape != planes[0].shape for p in planes):
            raise ValueError(
                "LabImage planes must be 2-D and equally shaped, got "
                f"{[p.shape for p in planes]}"
            )
        L, a, b = planes
        if L.size:
            if L.min() < -_RANGE_TOLERANCE or L.max() > L_MAX + _RANGE_TOLERANCE:
                raise ValueError("L must lie in [0, 100]")
            for name, plane in (("a", a), ("b", b)):
                if np.abs(plane).max() > AB_MAX + _RANGE_TOLERANCE:
                    raise ValueError(f"{name} must lie in [-128, 128]")
        object.__setattr__(self, "L", np.clip(L, 0.0, L_MAX))
        object.__setattr__(self, "a", np.clip(a, -AB_MAX, AB_MAX))
        object.__setattr__(self, "b", np.clip(b, -AB_MAX, AB_MAX))

    @property
    def height(self) -> int:
        return self.L.shape[0]

    @property
    def width(self) -> int:
        return self.L.shape[1]


@dataclass
class GamutCounter:
    """Counts pixels whose sRGB value had to be clamped."""

    pixels: int = 0
    images: int = field(default=0)


def srgb_to_lab(img: RgbImage) -> LabImage:
    lab = color.rgb2lab(img.data)
    L = np.clip(lab[..., 0], 0.0, L_MAX)
    return LabImage(L=L, a=lab[..., 1], b=lab[..., 2])


def out_of_gamut(img: LabImage) -> np.ndarray:
    """Boolean H x W mask of pixels that have no exact sRGB value."""
    negative_z = (img.L + 16.0) / 116.0 - img.b / 200.0 < 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        xyz = color.lab2xyz(np.stack([img.L, img.a, img.b], axis=-1))
    linear = xyz @ rgb_from_xyz.T
    outside = (linear < -GAMUT_TOLERANCE) | (linear > 1.0 + GAMUT_TOLERANCE)
    return negative_z | np.any(outside, axis=-1)


def lab_to_srgb(img: LabImage, counter: Optional[GamutCounter] = None) -> RgbImage:
    """Inverse of :func:`srgb_to_lab`; out-of-gamut values are clamped."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        rgb = color.lab2rgb(np.stack([img.L, img.a, img.b], axis=-1))
    if counter is not None:
        counter.pixels += int(out_of_gamut(img).sum())
        counter.images += 1
    return RgbImage(np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8))


def normalize_for_generator(img: LabImage) -> Tuple[torch.Tensor, torch.Tensor]:
    """Map L to L/50 - 1 and a, b to a/128, b/128; returns (1xHxW, 2xHxW)."""
    L = img.L / 50.0 - 1.0
    ab = np.stack([img.a, img.b]) / AB_MAX
    return (
        torch.from_numpy(L[None].astype(np.float32)),
        torch.from_numpy(ab.astype(np.float32)),
    )


def denormalize_ab(t: torch.Tensor) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of the ab normalisation; values outside [-1, 1] are clamped first."""
    if t.dim() != 3 or t.shape[0] != 2:
        raise ShapeError(f"expected a 2 x H x W tensor, got shape {tuple(t.shape)}")
    ab = t.detach().cpu().to(torch.float64).clamp(-1.0, 1.0).numpy() * AB_MAX
    return ab[0], ab[1]

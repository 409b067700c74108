"""
Fréchet Inception Distance between two image populations.

    FID = |mu_a - mu_b|^2 + Tr(S_a) + Tr(S_b) - 2 Tr(sqrt(S_a^1/2 S_b S_a^1/2))

The conjugated product S_a^1/2 S_b S_a^1/2 has the same square-root trace as
S_a S_b but is symmetric PSD, so a symmetric eigendecomposition suffices.
Feature means and covariances are accumulated in one streaming pass with an
associative merge, so populations can be split across workers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from scipy import linalg

from .colorspace import RgbImage
from .dataset import list_images, load_rgb
from .exceptions import DatasetError, ShapeError, VitGanError
from .feature_extractor import INPUT_SIZE, EmbeddingExtractor

logger = logging.getLogger(__name__)

ASYMMETRY_TOLERANCE = 1e-6
NEGATIVE_CLAMP = 1e-6


@dataclass(frozen=True)
class FidStats:
    n: int
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


class StatsAccumulator:
    """Streaming mean and scatter matrix (Welford / Chan et al. pairwise merge)."""

    def __init__(self, dim: Optional[int] = None):
        self.n = 0
        self.mean = None if dim is None else np.zeros(dim)
        self.scatter = None if dim is None else np.zeros((dim, dim))

    def update(self, features) -> "StatsAccumulator":
        """Add one vector (d,) or a block of vectors (k, d)."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        block = StatsAccumulator()
        block.n = x.shape[0]
        block.mean = x.mean(axis=0)
        centred = x - block.mean
        block.scatter = centred.T @ centred
        return self.merge(block)

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.scatter = other.n, other.mean.copy(), other.scatter.copy()
            return self
        if other.mean.shape != self.mean.shape:
            raise ShapeError(f"feature dims differ: {self.mean.shape[0]} vs {other.mean.shape[0]}")
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / n)
        self.scatter = self.scatter + other.scatter + np.outer(delta, delta) * (self.n * other.n / n)
        self.n = n
        return self

    def finalize(self) -> FidStats:
        if self.n < 2:
            raise VitGanError(f"FID statistics need at least 2 feature vectors, got {self.n}")
        sigma = self.scatter / (self.n - 1)
        return FidStats(n=self.n, mu=self.mean.copy(), sigma=(sigma + sigma.T) / 2.0)


def accumulate_stats(features: Iterable) -> FidStats:
    acc = StatsAccumulator()
    for f in features:
        acc.update(f)
    return acc.finalize()


def sqrtm_psd(M: np.ndarray) -> np.ndarray:
    """Unique PSD square root of a symmetric matrix; negative (and round-off) eigenvalues clamp to 0."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"sqrtm_psd needs a square matrix, got {M.shape}")
    asymmetry = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asymmetry > ASYMMETRY_TOLERANCE:
        raise ValueError(f"matrix is not symmetric (max |M - M^T| = {asymmetry:.3g})")
    w, V = linalg.eigh((M + M.T) / 2.0)
    # Eigenvalues within round-off of zero count as zero.
    floor = M.shape[0] * np.finfo(np.float64).eps * (np.abs(w).max() if w.size else 0.0)
    w = np.where(w > floor, w, 0.0)
    root = (V * np.sqrt(w)) @ V.T
    return (root + root.T) / 2.0


def fid(a: FidStats, b: FidStats) -> float:
    if a.dim != b.dim:
        raise ShapeError(f"FID statistics have different dims: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    root_a = sqrtm_psd(a.sigma)
    product = root_a @ b.sigma @ root_a
    covmean_trace = np.trace(sqrtm_psd((product + product.T) / 2.0))
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * covmean_trace)
    if -NEGATIVE_CLAMP <= value < 0.0:
        value = 0.0
    return value


# --- Image populations -----------------------------------------------------------

@dataclass
class FidReport:
    value: float
    backend: str
    n_real: int
    n_generated: int
    skipped: int

    def as_dict(self) -> dict:
        return {
            "backend": self.backend,
            "n_real": self.n_real,
            "n_generated": self.n_generated,
            "skipped": self.skipped,
            "value": self.value,
        }


def rgb_to_extractor_input(images: List[RgbImage]) -> torch.Tensor:
    """sRGB images -> N x 3 x 299 x 299 in [0, 1]."""
    batch = []
    for img in images:
        x = torch.from_numpy(img.data.astype(np.float32) / 255.0).permute(2, 0, 1)[None]
        batch.append(F.interpolate(x, size=(INPUT_SIZE, INPUT_SIZE), mode="bilinear", align_corners=False))
    return torch.cat(batch).clamp(0.0, 1.0)


def population_stats(images: Iterable[RgbImage], extractor: EmbeddingExtractor, batch_size: int = 16) -> FidStats:
    acc = StatsAccumulator()
    pending: List[RgbImage] = []
    for img in images:
        pending.append(img)
        if len(pending) == batch_size:
            acc.update(extractor.embed(rgb_to_extractor_input(pending)).double().numpy())
            pending = []
    if pending:
        acc.update(extractor.embed(rgb_to_extractor_input(pending)).double().numpy())
    return acc.finalize()


class _Counter:
    def __init__(self):
        self.loaded = 0
        self.skipped = 0


def iter_directory(directory, image_size: int, counter: _Counter) -> Iterator[RgbImage]:
    """Decode every image under ``directory``; failures are skipped and counted."""
    paths = list_images(directory)
    if not paths:
        raise DatasetError(f"no images under {directory}")
    for path in paths:
        try:
            img = load_rgb(path, image_size)
        except DatasetError as exc:
            logger.warning("Skipping %s", exc)
            counter.skipped += 1
            continue
        counter.loaded += 1
        yield img


def iter_colorized(gray_dir, generator, generator_extractor, image_size: int, counter: _Counter) -> Iterator[RgbImage]:
    from .generator import colorize

    for img in iter_directory(gray_dir, image_size, counter):
        yield colorize(img, generator, generator_extractor)


def evaluate_fid(
    real_dir,
    generated_dir=None,
    *,
    extractor: EmbeddingExtractor,
    generator=None,
    generator_extractor: Optional[EmbeddingExtractor] = None,
    gray_dir=None,
    image_size: int = 256,
    batch_size: int = 16,
) -> FidReport:
    """FID between the images under ``real_dir`` and either ``generated_dir`` or the
    colourisations of ``gray_dir`` produced by ``generator``."""
    for path in (real_dir, generated_dir, gray_dir):
        if path is not None and not Path(path).exists():
            raise DatasetError(f"no such directory: {path}")
    if generated_dir is None and (generator is None or gray_dir is None):
        raise DatasetError("need either a generated directory or a generator with a gray directory")

    real_count, gen_count = _Counter(), _Counter()
    real_stats = population_stats(iter_directory(real_dir, image_size, real_count), extractor, batch_size)
    if generated_dir is not None:
        generated = iter_directory(generated_dir, image_size, gen_count)
    else:
        generated = iter_colorized(gray_dir, generator, generator_extractor, image_size, gen_count)
    gen_stats = population_stats(generated, extractor, batch_size)

    report = FidReport(
        value=fid(real_stats, gen_stats),
        backend=extractor.backend,
        n_real=real_stats.n,
        n_generated=gen_stats.n,
        skipped=real_count.skipped + gen_count.skipped,
    )
    logger.info("FID %.6f (%s backend, %d vs %d images)", report.value, report.backend, report.n_real, report.n_generated)
    return report

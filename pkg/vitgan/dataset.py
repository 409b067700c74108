"""
Image ingestion: scan a directory tree, decode, resize, convert to Lab and
assemble seeded, drop-last batches.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch.utils.data import DataLoader, Dataset

from .colorspace import RgbImage, normalize_for_generator, srgb_to_lab
from .exceptions import DatasetError

logger = logging.getLogger(__name__)

SUPPORTED_SUFFIXES = frozenset({".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"})
PREFETCH_WORKERS = 1
PREFETCH_FACTOR = 2


@dataclass
class ManifestEntry:
    path: Path
    # None until the file has been fully decoded once.
    ok: Optional[bool] = None


@dataclass
class DatasetManifest:
    root: Path
    entries: List[ManifestEntry]
    image_size: int

    def __len__(self):
        return len(self.entries)

    @property
    def skipped(self) -> int:
        return sum(1 for e in self.entries if e.ok is False)

    def check(self) -> None:
        """Fully decode every entry not checked yet; only entries that decode join the epoch plan."""
        for entry in self.entries:
            if entry.ok is None:
                entry.ok = is_decodable(entry.path)
                if not entry.ok:
                    logger.warning("Skipping undecodable image %s", entry.path)

    def usable_indices(self) -> List[int]:
        self.check()
        return [i for i, e in enumerate(self.entries) if e.ok]

    def report(self) -> dict:
        return {
            "root": str(self.root),
            "images": len(self.entries),
            "usable": sum(1 for e in self.entries if e.ok),
            "skipped": self.skipped,
            "image_size": self.image_size,
        }


@dataclass
class Batch:
    L: torch.Tensor
    ab: torch.Tensor
    ids: Tuple[int, ...] = field(default_factory=tuple)
    # Position of the batch within its epoch.
    index: int = 0


def list_images(path) -> List[Path]:
    """A single supported file, or every supported file below a directory, in path order."""
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise DatasetError(f"no such file or directory: {path}")
    files = [p for p in path.rglob("*") if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES]
    return sorted(files, key=lambda p: p.relative_to(path).as_posix())


def scan(root, image_size: int = 256) -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    entries = [ManifestEntry(p) for p in list_images(root)]
    logger.info("Scanned %d images under %s", len(entries), root)
    return DatasetManifest(root=root, entries=entries, image_size=image_size)


def is_decodable(path: Path) -> bool:
    """True when every pixel decodes; a truncated file fails here, not mid-epoch."""
    try:
        decode_image(path)
    except DatasetError:
        return False
    return True


def decode_image(path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DatasetError(f"cannot decode {path}: {exc}") from exc


def load_rgb(path, image_size: int) -> RgbImage:
    """Decode and bilinearly resize to image_size x image_size (aspect not kept)."""
    img = decode_image(path)
    if img.size != (image_size, image_size):
        img = img.resize((image_size, image_size), Image.BILINEAR)
    return RgbImage(np.asarray(img, dtype=np.uint8))


def load_example(entry: ManifestEntry, image_size: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Returns normalised (L 1xSxS, ab 2xSxS); a corrupt file is marked and re-raised."""
    try:
        rgb = load_rgb(entry.path, image_size)
    except DatasetError:
        entry.ok = False
        raise
    entry.ok = True
    return normalize_for_generator(srgb_to_lab(rgb))


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def steps_per_epoch(n_images: int, batch_size: int) -> int:
    return n_images // batch_size


class LabDataset(Dataset):
    """Normalised ``(L, ab)`` pairs, indexed by manifest position."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest

    def __len__(self):
        return len(self.manifest.entries)

    def __getitem__(self, index: int) -> Tuple[torch.Tensor, torch.Tensor]:
        return load_example(self.manifest.entries[index], self.manifest.image_size)


def batch_ids(manifest: DatasetManifest, batch_size: int, seed: int, epoch: int) -> List[Tuple[int, ...]]:
    """Manifest indices of every batch of one epoch, in emission order."""
    usable = manifest.usable_indices()
    if batch_size > len(usable):
        raise DatasetError(
            f"batch_size {batch_size} exceeds the {len(usable)} usable images under {manifest.root}"
        )
    order = [usable[k] for k in epoch_permutation(len(usable), seed, epoch)]
    return [
        tuple(order[k * batch_size:(k + 1) * batch_size])
        for k in range(steps_per_epoch(len(usable), batch_size))
    ]


def batches(
    manifest: DatasetManifest,
    batch_size: int,
    seed: int,
    epoch: int,
    start: int = 0,
    prefetch: bool = False,
) -> Iterator[Batch]:
    """Seeded, drop-last batches of one epoch, beginning at batch index ``start``.

    The epoch's plan is the loader's batch sampler, so ``prefetch`` (worker
    processes decoding ahead) never changes what is emitted or in which order.
    """
    plan = batch_ids(manifest, batch_size, seed, epoch)[start:]
    options = {"num_workers": PREFETCH_WORKERS, "prefetch_factor": PREFETCH_FACTOR} if prefetch else {}
    loader = DataLoader(
        LabDataset(manifest),
        batch_sampler=plan,
        generator=torch.Generator().manual_seed(seed),
        **options,
    )
    for index, (ids, (L, ab)) in enumerate(zip(plan, loader), start=start):
        yield Batch(L=L, ab=ab, ids=tuple(int(i) for i in ids), index=index)

"""
Alternating GAN optimisation: one discriminator and one generator Adam update
per batch, epoch/step accounting, a phased learning-rate schedule, metrics CSV
and resumable checkpoints.

All randomness in a run comes from ``TrainConfig.seed``: one torch.Generator
drives initialisation and dropout, and epoch shuffles are drawn from
``(seed, epoch)``. A checkpoint stores the generator's state, so a resumed run
continues bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple

import torch
from torch import nn

from . import container
from .dataset import Batch, DatasetManifest, batches, scan, steps_per_epoch
from .discriminator import ViTDiscriminator, VitConfig, build_discriminator, discriminate
from .exceptions import (
    CheckpointError,
    ConfigError,
    DatasetError,
    NonFiniteGradientError,
    TrainingAborted,
)
from .feature_extractor import EmbeddingExtractor, build_extractor
from .generator import VIT_I_GAN, Generator, GeneratorConfig, build_generator
from .losses import DEFAULT_LAMBDA_L1, LossBreakdown, discriminator_loss, generator_loss
from .substrate import backward

logger = logging.getLogger(__name__)

METRICS_HEADER = ("step", "epoch", "l1", "adv_g", "adv_d_real", "adv_d_fake", "total_g", "total_d", "lr_g", "lr_d")
VALIDATION_HEADER = ("epoch", "step", "val_l1")
CHECKPOINT_DIR = "checkpoints"
FINAL_CHECKPOINT = "final.vgpc"


# --- Configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")


class LrSchedule:
    """Consecutive phases of ``(steps, lr)``; the last lr persists past the end."""

    def __init__(self, phases: Iterable[Tuple[int, float]] = ()):
        self.phases = tuple((int(steps), float(lr)) for steps, lr in phases)
        for steps, lr in self.phases:
            if steps <= 0:
                raise ConfigError(f"schedule phase length must be positive, got {steps}")
            if lr < 0:
                raise ConfigError(f"schedule lr must not be negative, got {lr}")

    def __bool__(self):
        return bool(self.phases)

    def lr_at(self, step: int, default: float) -> float:
        """Learning rate for the update taken at 0-based global ``step``."""
        if not self.phases:
            return default
        boundary = 0
        for steps, lr in self.phases:
            boundary += steps
            if step < boundary:
                return lr
        return self.phases[-1][1]

    @property
    def total_steps(self) -> int:
        return sum(steps for steps, _ in self.phases)


@dataclass(frozen=True)
class TrainConfig:
    data_root: str
    output_dir: str
    image_size: int = 256
    batch_size: int = 16
    epochs: int = 50
    lambda_l1: float = DEFAULT_LAMBDA_L1
    optimizer: OptimizerConfig = OptimizerConfig()
    discriminator_optimizer: OptimizerConfig = OptimizerConfig()
    schedule: Tuple[Tuple[int, float], ...] = ()
    variant: str = VIT_I_GAN
    seed: int = 0
    checkpoint_every: int = 1000
    # 0 means "run every epoch".
    max_steps: int = 0
    val_root: str = ""
    prefetch: bool = False
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: VitConfig = VitConfig()
    extractor_backend: str = "stub"
    extractor_weights: str = ""
    extractor_seed: int = 0
    # The resolved config tree this was built from, echoed into the run dir.
    echo: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("train.batch_size must be at least 2 for batch normalisation")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be at least 1")
        if self.generator.variant != self.variant:
            raise ConfigError(
                f"generator variant {self.generator.variant!r} does not match run variant {self.variant!r}"
            )
        if self.discriminator.image_size != self.image_size:
            raise ConfigError(
                f"discriminator.image_size {self.discriminator.image_size} differs from data.image_size {self.image_size}"
            )
        LrSchedule(self.schedule)

    @property
    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.schedule)

    def learning_rates(self, step: int) -> Tuple[float, float]:
        schedule = self.lr_schedule
        return (
            schedule.lr_at(step, self.optimizer.lr),
            schedule.lr_at(step, self.discriminator_optimizer.lr),
        )

    @property
    def uses_extractor(self) -> bool:
        return self.generator.fused


# --- Adam -----------------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, torch.Tensor]
    v: Dict[str, torch.Tensor]
    t: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, torch.Tensor]) -> "AdamState":
        return cls(
            m={name: torch.zeros_like(p) for name, p in params.items()},
            v={name: torch.zeros_like(p) for name, p in params.items()},
        )


def adam_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, Optional[torch.Tensor]],
    state: AdamState,
    cfg: OptimizerConfig,
    lr: Optional[float] = None,
) -> AdamState:
    """One bias-corrected Adam update of ``params`` in place.

    A missing gradient counts as zero. Every gradient is checked before any
    parameter moves, so a non-finite one leaves params and state untouched.
    """
    lr = cfg.lr if lr is None else lr
    resolved = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        elif g.shape != p.shape:
            raise ConfigError(f"gradient for '{name}' has shape {tuple(g.shape)}, parameter {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(name)
        resolved[name] = g

    state.t += 1
    bias1 = 1.0 - cfg.beta1**state.t
    bias2 = 1.0 - cfg.beta2**state.t
    with torch.no_grad():
        for name, p in params.items():
            g = resolved[name]
            m = state.m.setdefault(name, torch.zeros_like(p))
            v = state.v.setdefault(name, torch.zeros_like(p))
            m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
            denom = (v / bias2).sqrt_().add_(cfg.eps)
            p.addcdiv_(m / bias1, denom, value=-lr)
    return state


def trainable(module: nn.Module) -> "OrderedDict[str, torch.Tensor]":
    return OrderedDict((name, p) for name, p in module.named_parameters() if p.requires_grad)


@contextmanager
def frozen(module: nn.Module):
    """Temporarily stop gradients into ``module``'s parameters."""
    flags = [(p, p.requires_grad) for p in module.parameters()]
    for p, _ in flags:
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, flag in flags:
            p.requires_grad_(flag)


# --- Training state ---------------------------------------------------------------

@dataclass
class TrainingState:
    generator: Generator
    discriminator: ViTDiscriminator
    extractor: Optional[EmbeddingExtractor]
    generator_adam: AdamState
    discriminator_adam: AdamState
    rng: torch.Generator
    step: int = 0
    epoch: int = 0
    # Index of the next batch to take within ``epoch``.
    batch_index: int = 0


def init_state(cfg: TrainConfig) -> TrainingState:
    rng = torch.Generator().manual_seed(cfg.seed)
    generator = build_generator(cfg.generator, rng)
    discriminator = build_discriminator(cfg.discriminator, rng)
    extractor = None
    if cfg.uses_extractor:
        extractor = build_extractor(cfg.extractor_backend, cfg.extractor_weights, cfg.extractor_seed)
    return TrainingState(
        generator=generator,
        discriminator=discriminator,
        extractor=extractor,
        generator_adam=AdamState.zeros(trainable(generator)),
        discriminator_adam=AdamState.zeros(trainable(discriminator)),
        rng=rng,
    )


def train_step(batch: Batch, state: TrainingState, cfg: TrainConfig) -> LossBreakdown:
    """
    One alternating update:

    1. generator forward on the batch luminance;
    2. discriminator update on real and detached fake chroma;
    3. generator update against a fresh discriminator forward.
    """
    generator, discriminator = state.generator, state.discriminator
    generator.train()
    discriminator.train()
    lr_g, lr_d = cfg.learning_rates(state.step)

    ab_fake = generator(batch.L, state.extractor)

    discriminator.zero_grad(set_to_none=True)
    d_real = discriminate(batch.L, batch.ab, discriminator, state.rng)
    d_fake = discriminate(batch.L, ab_fake.detach(), discriminator, state.rng)
    total_d, adv_d_real, adv_d_fake = discriminator_loss(d_real, d_fake)
    backward(total_d)
    params_d = trainable(discriminator)
    adam_step(
        params_d,
        {name: p.grad for name, p in params_d.items()},
        state.discriminator_adam,
        cfg.discriminator_optimizer,
        lr_d,
    )

    generator.zero_grad(set_to_none=True)
    with frozen(discriminator):
        d_fake_g = discriminate(batch.L, ab_fake, discriminator, state.rng)
        total_g, adv_g, l1 = generator_loss(d_fake_g, ab_fake, batch.ab, cfg.lambda_l1)
        backward(total_g)
    params_g = trainable(generator)
    adam_step(
        params_g,
        {name: p.grad for name, p in params_g.items()},
        state.generator_adam,
        cfg.optimizer,
        lr_g,
    )

    state.step += 1
    return LossBreakdown(
        l1=l1.item(),
        adv_g=adv_g.item(),
        adv_d_real=adv_d_real.item(),
        adv_d_fake=adv_d_fake.item(),
        total_g=total_g.item(),
        total_d=total_d.item(),
        lambda_l1=cfg.lambda_l1,
    )


# --- Evaluation helpers ---------------------------------------------------------------

@contextmanager
def evaluating(*modules: nn.Module):
    modes = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        for m, mode in zip(modules, modes):
            m.train(mode)


def mean_abs_ab_error(
    generator: Generator,
    extractor: Optional[EmbeddingExtractor],
    batches: Iterable[Batch],
) -> float:
    """Mean |ab_pred - ab| over every element of every batch, generator in eval mode."""
    total, count = 0.0, 0
    with evaluating(generator):
        for batch in batches:
            pred = generator(batch.L, extractor)
            total += (pred - batch.ab).abs().sum().item()
            count += pred.numel()
    if not count:
        raise DatasetError("no batches to evaluate")
    return total / count


def discriminator_accuracy(
    discriminator: ViTDiscriminator,
    L: torch.Tensor,
    ab_real: torch.Tensor,
    ab_fake: torch.Tensor,
) -> float:
    """Fraction classified correctly; a logit above 0 means "real"."""
    with evaluating(discriminator):
        real = discriminate(L, ab_real, discriminator) > 0
        fake = discriminate(L, ab_fake, discriminator) <= 0
    return (real.sum().item() + fake.sum().item()) / (real.numel() + fake.numel())


# --- Checkpoints ------------------------------------------------------------------

def _adam_tensors(prefix: str, adam: AdamState) -> Dict[str, torch.Tensor]:
    tensors = {f"{prefix}.m.{name}": t for name, t in adam.m.items()}
    tensors.update({f"{prefix}.v.{name}": t for name, t in adam.v.items()})
    tensors[f"{prefix}.t"] = torch.tensor([adam.t], dtype=torch.int64)
    return tensors


def _strip(tensors: Mapping[str, torch.Tensor], prefix: str) -> "OrderedDict[str, torch.Tensor]":
    start = len(prefix) + 1
    return OrderedDict((k[start:], v) for k, v in tensors.items() if k.startswith(prefix + "."))


def checkpoint_tensors(state: TrainingState) -> Dict[str, torch.Tensor]:
    tensors: Dict[str, torch.Tensor] = {}
    tensors.update({f"generator.{k}": v for k, v in state.generator.state_dict().items()})
    tensors.update({f"discriminator.{k}": v for k, v in state.discriminator.state_dict().items()})
    tensors.update(_adam_tensors("adam_g", state.generator_adam))
    tensors.update(_adam_tensors("adam_d", state.discriminator_adam))
    tensors["rng"] = state.rng.get_state()
    tensors["progress"] = torch.tensor([state.step, state.epoch, state.batch_index], dtype=torch.int64)
    return tensors


def save_checkpoint(path, state: TrainingState, cfg: TrainConfig) -> str:
    manifest = {
        "kind": "checkpoint",
        "variant": cfg.variant,
        "image_size": cfg.image_size,
        "seed": cfg.seed,
        "step": state.step,
        "epoch": state.epoch,
        "batch_index": state.batch_index,
        "config": dict(cfg.echo),
    }
    digest = container.save(path, checkpoint_tensors(state), manifest)
    logger.info("Saved checkpoint %s at step %d", path, state.step)
    return digest


def restore_checkpoint(path, state: TrainingState) -> dict:
    """Load a checkpoint into an initialised ``state``; returns the manifest."""
    tensors, manifest = container.load(path, verify=True)
    if manifest.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is not a training checkpoint")
    try:
        state.generator.load_state_dict(_strip(tensors, "generator"), strict=True)
        state.discriminator.load_state_dict(_strip(tensors, "discriminator"), strict=True)
        for prefix, adam in (("adam_g", state.generator_adam), ("adam_d", state.discriminator_adam)):
            adam.m = dict(_strip(tensors, f"{prefix}.m"))
            adam.v = dict(_strip(tensors, f"{prefix}.v"))
            adam.t = int(tensors[f"{prefix}.t"][0])
        state.rng.set_state(tensors["rng"])
        state.step, state.epoch, state.batch_index = (int(x) for x in tensors["progress"])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"{path} does not match this model configuration: {exc}") from exc
    logger.info("Resumed from %s at step %d (epoch %d)", path, state.step, state.epoch)
    return manifest


def load_generator(path, cfg: TrainConfig) -> Generator:
    """Generator weights of a checkpoint, in eval mode."""
    tensors, manifest = container.load(path, verify=True)
    if manifest.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is not a training checkpoint")
    generator = Generator(cfg.generator)
    try:
        generator.load_state_dict(_strip(tensors, "generator"), strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path} does not match the generator configuration: {exc}") from exc
    return generator.eval()


# --- Logs -------------------------------------------------------------------------

class CsvLog:
    """Append-only CSV that survives a resume by truncating rows past a cut-off."""

    def __init__(self, path: Path, header: Tuple[str, ...]):
        self.path = path
        self.header = header
        self._handle = None
        self._writer = None

    def open(self, keep=None) -> "CsvLog":
        """``keep(row)`` selects existing rows to retain; ``None`` starts afresh."""
        rows = []
        if keep is not None and self.path.is_file():
            with self.path.open(newline="") as handle:
                rows = [row for row in csv.DictReader(handle) if keep(row)]
        self._handle = self.path.open("w", newline="")
        self._writer = csv.writer(self._handle)
        self._writer.writerow(self.header)
        for row in rows:
            self._writer.writerow([row[name] for name in self.header])
        self._handle.flush()
        return self

    def append(self, values) -> None:
        self._writer.writerow([repr(v) if isinstance(v, float) else v for v in values])
        self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.flush()
            self._handle.close()
            self._handle = None


@dataclass
class TrainResult:
    run_dir: Path
    final_checkpoint: Path
    metrics_path: Path
    steps: int
    epochs: int
    skipped: int = 0


def write_config_echo(cfg: TrainConfig, run_dir: Path) -> Path:
    path = run_dir / "config.json"
    path.write_text(json.dumps(dict(cfg.echo), indent=2, sort_keys=True))
    return path


def _save_or_abort(path: Path, state: TrainingState, cfg: TrainConfig, logs) -> None:
    try:
        save_checkpoint(path, state, cfg)
    except OSError as exc:
        for log in logs:
            log.close()
        logger.exception("Could not write checkpoint %s", path)
        raise TrainingAborted(f"checkpoint {path} could not be written: {exc}") from exc


def _validation_manifest(cfg: TrainConfig) -> Optional[DatasetManifest]:
    if not cfg.val_root:
        return None
    manifest = scan(cfg.val_root, cfg.image_size)
    if not manifest.usable_indices():
        raise DatasetError(f"validation set {cfg.val_root} has no decodable images")
    return manifest


def validate(state: TrainingState, manifest: DatasetManifest, cfg: TrainConfig) -> float:
    batch_size = min(cfg.batch_size, len(manifest.usable_indices()))
    return mean_abs_ab_error(state.generator, state.extractor, batches(manifest, batch_size, cfg.seed, 0))


def train(cfg: TrainConfig, resume=None, log_every: int = 50) -> TrainResult:
    """Run the epoch loop to completion (or ``max_steps``) and write the final checkpoint."""
    run_dir = Path(cfg.output_dir)
    checkpoint_dir = run_dir / CHECKPOINT_DIR
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(cfg, run_dir)

    manifest = scan(cfg.data_root, cfg.image_size)
    usable = len(manifest.usable_indices())
    if not usable:
        raise DatasetError(f"no decodable images under {cfg.data_root}")
    per_epoch = steps_per_epoch(usable, cfg.batch_size)
    val_manifest = _validation_manifest(cfg)
    logger.info(
        "Training %s on %d images (%d skipped): %d steps/epoch, %d epochs",
        cfg.variant, usable, manifest.skipped, per_epoch, cfg.epochs,
    )

    state = init_state(cfg)
    if resume is not None:
        restore_checkpoint(resume, state)
    resumed_step, resumed_epoch = state.step, state.epoch

    metrics = CsvLog(run_dir / "metrics.csv", METRICS_HEADER).open(
        keep=(lambda row: int(row["step"]) <= resumed_step) if resume is not None else None
    )
    validation = CsvLog(run_dir / "validation.csv", VALIDATION_HEADER)
    if val_manifest is not None:
        validation.open(keep=(lambda row: int(row["epoch"]) < resumed_epoch) if resume is not None else None)
    logs = (metrics, validation)

    finished = False
    try:
        for epoch in range(state.epoch, cfg.epochs):
            state.epoch = epoch
            for batch in batches(manifest, cfg.batch_size, cfg.seed, epoch, start=state.batch_index, prefetch=cfg.prefetch):
                losses = train_step(batch, state, cfg)
                state.batch_index = batch.index + 1
                lr_g, lr_d = cfg.learning_rates(state.step - 1)
                row = losses.as_row()
                metrics.append([state.step, epoch] + [row[name] for name in METRICS_HEADER[2:8]] + [lr_g, lr_d])
                if log_every and state.step % log_every == 0:
                    logger.info("step %d epoch %d l1 %.5f total_g %.5f total_d %.5f",
                                state.step, epoch, losses.l1, losses.total_g, losses.total_d)
                if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                    _save_or_abort(checkpoint_dir / f"step-{state.step:08d}.vgpc", state, cfg, logs)
                if cfg.max_steps and state.step >= cfg.max_steps:
                    finished = True
                    break
            if val_manifest is not None and (not finished or state.batch_index >= per_epoch):
                val_l1 = validate(state, val_manifest, cfg)
                validation.append([epoch, state.step, val_l1])
                logger.info("epoch %d validation l1 %.5f", epoch, val_l1)
            if finished:
                break
            state.epoch, state.batch_index = epoch + 1, 0

        final = checkpoint_dir / FINAL_CHECKPOINT
        _save_or_abort(final, state, cfg, logs)
    finally:
        for log in logs:
            log.close()

    logger.info("Finished after %d steps; final checkpoint %s", state.step, final)
    return TrainResult(
        run_dir=run_dir,
        final_checkpoint=final,
        metrics_path=metrics.path,
        steps=state.step,
        epochs=state.epoch,
        skipped=manifest.skipped,
    )

"""
Workflows behind the management commands: train, colourise and evaluate.

Commands stay thin; everything that touches settings, the run registry or the
filesystem layout of a run lives here.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import torch
from django.conf import settings
from django.utils import timezone
from PIL import Image

from . import container
from .colorspace import GamutCounter
from .dataset import list_images, load_rgb
from .exceptions import CheckpointError, DatasetError, VitGanError, WeightsNotLoadedError
from .feature_extractor import EmbeddingExtractor, build_extractor, load_pretrained, make_stub_extractor
from .fid import FidReport, evaluate_fid
from .forms import resolve_config, train_config_from_tree
from .generator import Generator, colorize
from .models import FidEvaluation, TrainingRun
from .trainer import TrainConfig, TrainResult, load_generator, train

logger = logging.getLogger(__name__)

# --- Configuration ----------------------------------------------------------------

OUTPUT_SUFFIX = "_color"
OUTPUT_FORMAT = ".png"
FID_REPORT_NAME = "fid_report.json"


def vitgan_setting(name: str):
    return settings.VITGAN[name]


def configure_determinism() -> None:
    if vitgan_setting('DETERMINISTIC'):
        torch.use_deterministic_algorithms(True)


def resolve_output_dir(tree: dict, config_path=None) -> str:
    """Empty or relative ``output_dir`` values are placed under RUNS_ROOT."""
    output_dir = tree.get('output_dir') or ""
    if not output_dir:
        output_dir = Path(config_path).stem if config_path else tree.get('variant', 'run')
    path = Path(output_dir)
    if not path.is_absolute():
        path = Path(vitgan_setting('RUNS_ROOT')) / path
    return str(path)


def load_train_config(path=None, overrides: Iterable[str] = (), tree: Optional[dict] = None) -> TrainConfig:
    resolved = resolve_config(path, overrides, tree)
    resolved['output_dir'] = resolve_output_dir(resolved, path)
    return train_config_from_tree(resolved)


def checkpoint_config_tree(path) -> dict:
    """The resolved config a checkpoint was trained with."""
    _, manifest = container.load(path, verify=False)
    tree = manifest.get('config')
    if not tree:
        raise CheckpointError(f"{path} carries no config echo")
    return tree


def config_from_checkpoint(path) -> TrainConfig:
    return train_config_from_tree(checkpoint_config_tree(path))


# --- Run registry (best effort) ---------------------------------------------------

def _registry(action, *args, **kwargs):
    try:
        return action(*args, **kwargs)
    except Exception as exc:  # pragma: no cover - best effort
        logger.warning("Run registry unavailable: %s", exc)
        return None


def _start_run(cfg: TrainConfig, resume) -> TrainingRun:
    return TrainingRun.objects.create(
        run_dir=cfg.output_dir,
        variant=cfg.variant,
        seed=cfg.seed,
        config=dict(cfg.echo),
        status='running',
        resumed_from=str(resume or ""),
    )


def _finish_run(run: Optional[TrainingRun], status: str, result: Optional[TrainResult] = None, error: str = ""):
    if run is None:
        return
    run.status = status
    run.error = error
    run.finished_at = timezone.now()
    if result is not None:
        run.steps = result.steps
        run.final_checkpoint = str(result.final_checkpoint)
    run.save()


def recent_runs(limit: int = 10) -> List[TrainingRun]:
    return list(TrainingRun.objects.all()[:limit])


def recent_evaluations(limit: int = 10) -> List[FidEvaluation]:
    return list(FidEvaluation.objects.all()[:limit])


# --- Training -----------------------------------------------------------------------

def run_training(cfg: TrainConfig, resume=None) -> TrainResult:
    configure_determinism()
    run = _registry(_start_run, cfg, resume)
    try:
        result = train(cfg, resume=resume)
    except VitGanError as exc:
        _registry(_finish_run, run, 'failed', error=str(exc))
        raise
    except Exception as exc:
        logger.exception("Training failed")
        _registry(_finish_run, run, 'failed', error=str(exc))
        raise
    _registry(_finish_run, run, 'completed', result)
    return result


# --- Colourisation ----------------------------------------------------------------

@dataclass
class ColorizeReport:
    written: List[Path] = field(default_factory=list)
    skipped: List[Path] = field(default_factory=list)
    timings: List[Tuple[str, float]] = field(default_factory=list)
    out_of_gamut: int = 0

    @property
    def seconds(self) -> float:
        return sum(t for _, t in self.timings)


def load_colorizer(checkpoint) -> Tuple[Generator, Optional[EmbeddingExtractor], TrainConfig]:
    """Generator (eval mode) and the extractor it was trained with."""
    if not Path(checkpoint).is_file():
        raise CheckpointError(f"no such checkpoint: {checkpoint}")
    cfg = config_from_checkpoint(checkpoint)
    generator = load_generator(checkpoint, cfg)
    extractor = None
    if cfg.uses_extractor:
        extractor = build_extractor(cfg.extractor_backend, cfg.extractor_weights, cfg.extractor_seed)
    return generator, extractor, cfg


def output_path(source: Path, output_dir: Path, input_root: Optional[Path] = None) -> Path:
    """name.ext -> name_color.png, keeping the subdirectory it had under ``input_root``."""
    relative = source.relative_to(input_root) if input_root is not None else Path(source.name)
    return output_dir / relative.parent / f"{source.stem}{OUTPUT_SUFFIX}{OUTPUT_FORMAT}"


def colorize_paths(checkpoint, input_path, output_dir) -> ColorizeReport:
    """Colourise one image or every image under a directory at the trained size."""
    generator, extractor, cfg = load_colorizer(checkpoint)
    sources = list_images(input_path)
    input_root = Path(input_path) if Path(input_path).is_dir() else None
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    report = ColorizeReport()
    counter = GamutCounter()
    for source in sources:
        started = time.perf_counter()
        try:
            img = load_rgb(source, cfg.image_size)
        except DatasetError as exc:
            logger.warning("Skipping %s", exc)
            report.skipped.append(source)
            continue
        result = colorize(img, generator, extractor, counter)
        target = output_path(source, output_dir, input_root)
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(result.data).save(target)
        report.written.append(target)
        report.timings.append((source.name, time.perf_counter() - started))
    report.out_of_gamut = counter.pixels
    logger.info("Colourised %d images (%d skipped)", len(report.written), len(report.skipped))
    return report


# --- FID ------------------------------------------------------------------------------

def fid_extractor(backend: str, weights: str = "") -> EmbeddingExtractor:
    if backend == 'stub':
        return make_stub_extractor(vitgan_setting('STUB_EXTRACTOR_SEED'))
    weights = weights or vitgan_setting('EXTRACTOR_WEIGHTS')
    if not weights:
        raise WeightsNotLoadedError("the pretrained backend needs --weights or VITGAN_EXTRACTOR_WEIGHTS")
    return load_pretrained(weights)


def fid_report_path(generated_dir=None, gray_dir=None, report_path=None) -> Path:
    """``report_path`` when given, else fid_report.json beside the generated images."""
    if report_path:
        return Path(report_path)
    return Path(generated_dir or gray_dir) / FID_REPORT_NAME


def _record_evaluation(report: FidReport, real_dir, generated, checkpoint) -> FidEvaluation:
    return FidEvaluation.objects.create(
        real_path=str(real_dir),
        generated_path=str(generated),
        checkpoint=str(checkpoint or ""),
        backend=report.backend,
        n_real=report.n_real,
        n_generated=report.n_generated,
        skipped=report.skipped,
        value=report.value,
    )


def run_fid(
    real_dir,
    generated_dir=None,
    checkpoint=None,
    gray_dir=None,
    backend: Optional[str] = None,
    weights: str = "",
    image_size: Optional[int] = None,
    report_path=None,
) -> FidReport:
    backend = backend or vitgan_setting('EXTRACTOR_BACKEND')
    extractor = fid_extractor(backend, weights)
    generator = generator_extractor = None
    if generated_dir is None:
        if checkpoint is None or gray_dir is None:
            raise DatasetError("give --gen, or --ckpt together with --gray")
        generator, generator_extractor, cfg = load_colorizer(checkpoint)
        image_size = image_size or cfg.image_size
    report = evaluate_fid(
        real_dir,
        generated_dir,
        extractor=extractor,
        generator=generator,
        generator_extractor=generator_extractor,
        gray_dir=gray_dir,
        image_size=image_size or 256,
    )
    report_path = fid_report_path(generated_dir, gray_dir, report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    logger.info("FID report written to %s", report_path)
    _registry(_record_evaluation, report, real_dir, generated_dir or gray_dir, checkpoint)
    return report

"""
Run-config loading and validation.

A run config is a two-level TOML tree. ``resolve_config`` merges
``DEFAULTS <- preset <- file <- --set overrides``; ``train_config_from_tree``
validates every section with its form and builds a ``TrainConfig``.
"""

from __future__ import annotations

import copy
import json

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Iterable, Optional, Tuple

from django import forms
from django.core.exceptions import NON_FIELD_ERRORS

from .discriminator import VitConfig
from .exceptions import ConfigError
from .generator import VARIANTS, GeneratorConfig
from .presets import DEFAULTS, PRESETS
from .trainer import OptimizerConfig, TrainConfig


class ScheduleField(forms.Field):
    """A list of ``[steps, lr]`` phases."""

    def to_python(self, value):
        if value in self.empty_values:
            return []
        if not isinstance(value, (list, tuple)):
            raise forms.ValidationError("Expected a list of [steps, lr] pairs.")
        phases = []
        for phase in value:
            if not isinstance(phase, (list, tuple)) or len(phase) != 2:
                raise forms.ValidationError("Each phase must be a [steps, lr] pair.")
            try:
                steps, lr = int(phase[0]), float(phase[1])
            except (TypeError, ValueError):
                raise forms.ValidationError("Phase steps must be an integer and lr a number.")
            if steps <= 0:
                raise forms.ValidationError("Phase steps must be positive.")
            if lr < 0:
                raise forms.ValidationError("Phase lr must not be negative.")
            phases.append([steps, lr])
        return phases


class RunForm(forms.Form):
    seed = forms.IntegerField(min_value=0)
    variant = forms.CharField()
    output_dir = forms.CharField(required=False)
    preset = forms.CharField(required=False)

    def clean_variant(self):
        variant = self.cleaned_data.get('variant')
        if variant not in VARIANTS:
            raise forms.ValidationError(f"Must be one of {', '.join(VARIANTS)}.")
        return variant

    def clean_preset(self):
        preset = self.cleaned_data.get('preset') or ""
        if preset and preset not in PRESETS:
            raise forms.ValidationError(f"Unknown preset; choose from {', '.join(sorted(PRESETS))}.")
        return preset


class DataForm(forms.Form):
    root = forms.CharField()
    val_root = forms.CharField(required=False)
    image_size = forms.IntegerField(min_value=32)
    prefetch = forms.BooleanField(required=False)

    def clean_image_size(self):
        size = self.cleaned_data.get('image_size')
        if size % 32:
            raise forms.ValidationError("Must be a multiple of 32.")
        return size


class TrainForm(forms.Form):
    batch_size = forms.IntegerField()
    epochs = forms.IntegerField(min_value=1)
    lambda_l1 = forms.FloatField(min_value=0)
    checkpoint_every = forms.IntegerField(min_value=0)
    max_steps = forms.IntegerField(min_value=0)
    schedule = ScheduleField(required=False)

    def clean_batch_size(self):
        batch_size = self.cleaned_data.get('batch_size')
        if batch_size < 2:
            raise forms.ValidationError("Must be at least 2 for batch normalisation.")
        return batch_size


class OptimizerForm(forms.Form):
    lr = forms.FloatField()
    beta1 = forms.FloatField()
    beta2 = forms.FloatField()
    eps = forms.FloatField()

    def clean_lr(self):
        lr = self.cleaned_data.get('lr')
        if lr <= 0:
            raise forms.ValidationError("Must be positive.")
        return lr

    def clean_eps(self):
        eps = self.cleaned_data.get('eps')
        if eps <= 0:
            raise forms.ValidationError("Must be positive.")
        return eps

    def clean(self):
        cleaned_data = super().clean()
        for name in ('beta1', 'beta2'):
            beta = cleaned_data.get(name)
            if beta is not None and not 0.0 <= beta < 1.0:
                self.add_error(name, "Must lie in [0, 1).")
        return cleaned_data


class GeneratorForm(forms.Form):
    width_divisor = forms.IntegerField(min_value=1)
    leaky_slope = forms.FloatField(min_value=0)


class DiscriminatorForm(forms.Form):
    patch_size = forms.IntegerField(min_value=1)
    depth = forms.IntegerField(min_value=1)
    heads = forms.IntegerField(min_value=1)
    mlp_dim = forms.IntegerField(min_value=1)
    dropout = forms.FloatField(min_value=0)
    emb_dropout = forms.FloatField(min_value=0)
    token_dim = forms.IntegerField(min_value=1)

    def clean(self):
        cleaned_data = super().clean()
        for name in ('dropout', 'emb_dropout'):
            rate = cleaned_data.get(name)
            if rate is not None and rate >= 1.0:
                self.add_error(name, "Must lie in [0, 1).")
        heads, token_dim = cleaned_data.get('heads'), cleaned_data.get('token_dim')
        if heads and token_dim and token_dim % heads:
            self.add_error('token_dim', f"Must be divisible by heads ({heads}).")
        return cleaned_data


class ExtractorForm(forms.Form):
    backend = forms.ChoiceField(choices=[('stub', 'stub'), ('pretrained', 'pretrained')])
    weights = forms.CharField(required=False)
    seed = forms.IntegerField(min_value=0)

    def clean(self):
        cleaned_data = super().clean()
        if cleaned_data.get('backend') == 'pretrained' and not cleaned_data.get('weights'):
            self.add_error('weights', "Required by the pretrained backend.")
        return cleaned_data


SECTION_FORMS = {
    'data': DataForm,
    'train': TrainForm,
    'optimizer': OptimizerForm,
    'discriminator_optimizer': OptimizerForm,
    'generator': GeneratorForm,
    'discriminator': DiscriminatorForm,
    'extractor': ExtractorForm,
}
TOP_LEVEL = tuple(RunForm.base_fields)


# --- Loading and merging ---------------------------------------------------------

def deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config(path) -> dict:
    """Parse a TOML run config (or a ``config.json`` echo of one)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == '.json':
            return json.loads(path.read_text())
        with path.open('rb') as handle:
            return tomllib.load(handle)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_override(text: str) -> Tuple[Tuple[str, ...], object]:
    """``section.key=value`` -> ((section, key), value); value is read as TOML."""
    if '=' not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split('=', 1)
    path = tuple(part for part in key.strip().split('.'))
    if not all(path) or len(path) > 2:
        raise ConfigError(f"override key {key!r} must be 'key' or 'section.key'")
    try:
        value = tomllib.loads(f"value = {raw.strip()}")['value']
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path, value


def apply_overrides(tree: dict, overrides: Iterable[str]) -> dict:
    tree = copy.deepcopy(tree)
    for text in overrides:
        path, value = parse_override(text)
        if len(path) == 1:
            tree[path[0]] = value
        else:
            section = tree.setdefault(path[0], {})
            if not isinstance(section, dict):
                raise ConfigError(f"override {text!r}: '{path[0]}' is not a section")
            section[path[1]] = value
    return tree


def check_keys(tree: dict) -> None:
    unknown = []
    for key, value in tree.items():
        if key in SECTION_FORMS:
            if not isinstance(value, dict):
                unknown.append(f"{key}: must be a section")
                continue
            fields = SECTION_FORMS[key].base_fields
            unknown.extend(f"{key}.{name}: unknown key" for name in value if name not in fields)
        elif key not in TOP_LEVEL:
            unknown.append(f"{key}: unknown key")
    if unknown:
        raise ConfigError("invalid config:\n  " + "\n  ".join(unknown))


def resolve_config(path=None, overrides: Iterable[str] = (), tree: Optional[dict] = None) -> dict:
    """Merge defaults, the named preset, the file (or ``tree``) and overrides."""
    overrides = list(overrides)
    user = read_config(path) if path is not None else copy.deepcopy(tree or {})
    user = apply_overrides(user, overrides)
    check_keys(user)
    preset = user.get('preset') or ""
    if preset and preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
    merged = deep_merge(DEFAULTS, PRESETS.get(preset, {}))
    merged = deep_merge(merged, user)
    if not merged.get('discriminator_optimizer'):
        merged['discriminator_optimizer'] = copy.deepcopy(merged['optimizer'])
    else:
        merged['discriminator_optimizer'] = deep_merge(merged['optimizer'], merged['discriminator_optimizer'])
    return merged


# --- Validation -----------------------------------------------------------------

def validate_tree(tree: dict) -> dict:
    """Run every section form; returns the cleaned tree or raises one ConfigError
    listing ``section.field: message`` for each failure."""
    check_keys(tree)
    cleaned, errors = {}, {}

    top = RunForm(data={name: tree.get(name) for name in TOP_LEVEL})
    if top.is_valid():
        cleaned.update(top.cleaned_data)
    else:
        for name, messages in top.errors.items():
            errors[name] = list(messages)

    for section, form_class in SECTION_FORMS.items():
        form = form_class(data=tree.get(section, {}))
        if form.is_valid():
            cleaned[section] = dict(form.cleaned_data)
            continue
        for name, messages in form.errors.items():
            key = section if name == NON_FIELD_ERRORS else f"{section}.{name}"
            errors[key] = list(messages)

    if errors:
        raise ConfigError.from_field_errors(errors)
    return cleaned


def train_config_from_tree(tree: dict) -> TrainConfig:
    cleaned = validate_tree(tree)
    data, train = cleaned['data'], cleaned['train']
    gen, disc, ext = cleaned['generator'], cleaned['discriminator'], cleaned['extractor']
    try:
        generator = GeneratorConfig(variant=cleaned['variant'], leaky_slope=gen['leaky_slope']).reduced(
            gen['width_divisor']
        )
        discriminator = VitConfig(image_size=data['image_size'], **disc)
        return TrainConfig(
            data_root=data['root'],
            output_dir=cleaned['output_dir'],
            image_size=data['image_size'],
            batch_size=train['batch_size'],
            epochs=train['epochs'],
            lambda_l1=train['lambda_l1'],
            optimizer=OptimizerConfig(**cleaned['optimizer']),
            discriminator_optimizer=OptimizerConfig(**cleaned['discriminator_optimizer']),
            schedule=tuple((steps, lr) for steps, lr in train['schedule']),
            variant=cleaned['variant'],
            seed=cleaned['seed'],
            checkpoint_every=train['checkpoint_every'],
            max_steps=train['max_steps'],
            val_root=data['val_root'],
            prefetch=data['prefetch'],
            generator=generator,
            discriminator=discriminator,
            extractor_backend=ext['backend'],
            extractor_weights=ext['weights'],
            extractor_seed=ext['seed'],
            echo=cleaned,
        )
    except ConfigError as exc:
        if exc.field_errors:
            raise
        # Cross-section checks (image_size vs patch_size) surface from the model configs.
        raise ConfigError.from_field_errors({"discriminator": [str(exc)]}) from exc

"""
The fixed menu of differentiable operations every network here is built from.

Each op is a thin, shape-checked wrapper over ``torch.nn.functional``;
reverse-mode gradients come from torch autograd. The small ``nn.Module``
layer holders own the parameters (so ``named_parameters()`` yields the
dotted names used by checkpoints) and call the functional ops in
``forward``.

Compute is 32-bit by default. ``precision(torch.float64)`` switches newly
created tensors to 64-bit for gradient checking.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Optional, Sequence, Union

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ShapeError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LN_EPS = 1e-5


@contextmanager
def precision(dtype: torch.dtype = torch.float64) -> Iterator[None]:
    """Temporarily change the default dtype for tensors created inside the block."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(previous)


def _shape(t: torch.Tensor) -> tuple:
    return tuple(t.shape)


def _require_dims(name: str, t: torch.Tensor, dims: int) -> None:
    if t.dim() != dims:
        raise ShapeError(f"{name}: expected a {dims}-D tensor, got shape {_shape(t)}")


# --- Convolutions ------------------------------------------------------------------

def conv2d(
    x: torch.Tensor,
    w: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    """Cross-correlation; weight is C_out x C_in x k x k."""
    _require_dims("conv2d input", x, 4)
    _require_dims("conv2d weight", w, 4)
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d: input {_shape(x)} has {x.shape[1]} channels, "
            f"weight {_shape(w)} expects {w.shape[1]}"
        )
    if x.shape[2] + 2 * padding < w.shape[2] or x.shape[3] + 2 * padding < w.shape[3]:
        raise ShapeError(
            f"conv2d: kernel of weight {_shape(w)} does not fit input {_shape(x)} "
            f"with padding {padding}"
        )
    return F.conv2d(x, w, bias, stride=stride, padding=padding)


def conv_transpose2d(
    x: torch.Tensor,
    w: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    """Adjoint of :func:`conv2d`; weight is C_in x C_out x k x k."""
    _require_dims("conv_transpose2d input", x, 4)
    _require_dims("conv_transpose2d weight", w, 4)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"conv_transpose2d: input {_shape(x)} has {x.shape[1]} channels, "
            f"weight {_shape(w)} expects {w.shape[0]}"
        )
    return F.conv_transpose2d(x, w, bias, stride=stride, padding=padding)


# --- Resampling ---------------------------------------------------------------------

def avg_pool2(x: torch.Tensor) -> torch.Tensor:
    _require_dims("avg_pool2 input", x, 4)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"avg_pool2: spatial extents must be even, got shape {_shape(x)}")
    return F.avg_pool2d(x, kernel_size=2, stride=2)


def upsample_nearest2(x: torch.Tensor) -> torch.Tensor:
    _require_dims("upsample_nearest2 input", x, 4)
    return F.interpolate(x, scale_factor=2, mode="nearest")


# --- Dense ops ----------------------------------------------------------------------

def linear(x: torch.Tensor, w: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {_shape(x)} does not match weight {_shape(w)}")
    return F.linear(x, w, bias)


def layer_norm(
    x: torch.Tensor,
    gain: Optional[torch.Tensor] = None,
    shift: Optional[torch.Tensor] = None,
    eps: float = LN_EPS,
) -> torch.Tensor:
    return F.layer_norm(x, (x.shape[-1],), gain, shift, eps)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=axis)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    return F.leaky_relu(x, negative_slope=slope)


def relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


def dropout(
    x: torch.Tensor,
    rate: float,
    training: bool,
    rng: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate), eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = torch.empty_like(x).bernoulli_(1.0 - rate, generator=rng)
    return x * keep / (1.0 - rate)


@dataclass
class RunningStats:
    mean: torch.Tensor
    var: torch.Tensor
    momentum: float = BN_MOMENTUM


def batch_norm2d(
    x: torch.Tensor,
    gain: torch.Tensor,
    shift: torch.Tensor,
    running_stats: RunningStats,
    training: bool,
    eps: float = BN_EPS,
) -> torch.Tensor:
    """Batch statistics (and an EMA update of ``running_stats``) in training mode,
    running statistics in eval mode."""
    _require_dims("batch_norm2d input", x, 4)
    if training and x.shape[0] < 2:
        raise ShapeError(f"batch_norm2d: training needs a batch of at least 2, got shape {_shape(x)}")
    return F.batch_norm(
        x,
        running_stats.mean,
        running_stats.var,
        gain,
        shift,
        training=training,
        momentum=running_stats.momentum,
        eps=eps,
    )


# --- Gradients ----------------------------------------------------------------------

def backward(loss: torch.Tensor) -> None:
    """Populate ``.grad`` of every parameter reachable from a scalar loss."""
    if loss.dim() != 0:
        raise ShapeError(f"backward: loss must be a scalar, got shape {_shape(loss)}")
    loss.backward()


ParamsLike = Union[Mapping[str, torch.Tensor], Sequence[torch.Tensor]]


def _as_list(params: ParamsLike) -> list:
    if isinstance(params, Mapping):
        return list(params.values())
    return list(params)


def grad_check(
    f: Callable[[], torch.Tensor],
    params: ParamsLike,
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
    atol: float = 1e-6,
) -> float:
    """
    Compare reverse-mode gradients of ``f`` with central finite differences.

    ``f`` closes over ``params`` and returns a scalar. When ``max_coords`` is
    given, that many coordinates are sampled (seeded) instead of visiting all.
    The relative error of one coordinate is |a - n| / max(|a|, |n|, atol).

    Returns:
        The largest relative error seen.
    """
    tensors = _as_list(params)
    loss = f()
    if loss.dim() != 0:
        raise ShapeError(f"grad_check: f must return a scalar, got shape {_shape(loss)}")
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    analytic = [
        torch.zeros_like(t) if g is None else g.detach()
        for t, g in zip(tensors, analytic)
    ]

    coords = [(i, j) for i, t in enumerate(tensors) for j in range(t.numel())]
    if max_coords is not None and len(coords) > max_coords:
        rng = torch.Generator().manual_seed(seed)
        picks = torch.randperm(len(coords), generator=rng)[:max_coords].tolist()
        coords = [coords[k] for k in sorted(picks)]

    worst = 0.0
    with torch.no_grad():
        for i, j in coords:
            flat = tensors[i].view(-1)
            original = flat[j].item()
            flat[j] = original + eps
            plus = f().item()
            flat[j] = original - eps
            minus = f().item()
            flat[j] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = analytic[i].view(-1)[j].item()
            scale = max(abs(exact), abs(numeric), atol)
            worst = max(worst, abs(exact - numeric) / scale)
    return worst


# --- Layer holders -----------------------------------------------------------------

class Conv2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(torch.zeros(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(torch.zeros(in_channels, out_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None

    def forward(self, x):
        return conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(nn.Module):
    def __init__(self, channels, momentum=BN_MOMENTUM):
        super().__init__()
        self.momentum = momentum
        self.gain = nn.Parameter(torch.ones(channels))
        self.shift = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x):
        stats = RunningStats(self.running_mean, self.running_var, self.momentum)
        return batch_norm2d(x, self.gain, self.shift, stats, self.training)


class Linear(nn.Module):
    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features)) if bias else None

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, features):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(features))
        self.shift = nn.Parameter(torch.zeros(features))

    def forward(self, x):
        return layer_norm(x, self.gain, self.shift)


def normal_(tensor: torch.Tensor, std: float, rng: torch.Generator, mean: float = 0.0) -> torch.Tensor:
    with torch.no_grad():
        return tensor.normal_(mean, std, generator=rng)


def freeze(module: nn.Module) -> nn.Module:
    """Put a module in eval mode and stop gradients into its parameters."""
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())

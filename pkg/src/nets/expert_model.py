"""
Expert model F(φ, θ, x) = f(θ, g(φ, x)) and the weight-space operations the
training rule needs: cloning, head growth, averaging and flattening.
"""

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from src.nets.backbones import ARCHITECTURES, Backbone
from src.utils.errors import ShapeMismatch, HeterogeneousModels, LayoutMismatch, ConfigInvalid
from src.utils.seeding import torch_seed

logger = logging.getLogger(__name__)

PARTS = ('phi', 'theta', 'all')


class ExpertModel(nn.Module):
    """
    Feature extractor g (weights φ) followed by a linear head f (weights θ).

    Attributes:
        features: Backbone producing h
        head: Linear classifier, one output per learned class
        arch_id: Backbone identifier (key of ARCHITECTURES)
        input_shape: Per-sample input shape
        arch_kwargs: Backbone constructor arguments (for checkpoints)
    """

    def __init__(self, features: Backbone, head_width: int, arch_id: str,
                 input_shape: Sequence[int], arch_kwargs: Optional[dict] = None):
        super().__init__()
        self.features = features
        self.head = nn.Linear(features.out_dim, head_width)
        self.arch_id = arch_id
        self.input_shape = tuple(int(s) for s in input_shape)
        self.arch_kwargs = dict(arch_kwargs or {})

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.features(x)
        return h, self.head(h)

    @property
    def head_width(self) -> int:
        return self.head.out_features

    def feature_layer(self) -> nn.Parameter:
        """Weights of the last feature layer (the layer producing h)."""
        return self.features.feature_layer()

    def phi(self) -> List[Tuple[str, nn.Parameter]]:
        return [(f"features.{n}", p) for n, p in self.features.named_parameters()]

    def theta(self) -> List[Tuple[str, nn.Parameter]]:
        return [(f"head.{n}", p) for n, p in self.head.named_parameters()]

    def part(self, part: str) -> List[Tuple[str, nn.Parameter]]:
        if part == 'phi':
            return self.phi()
        if part == 'theta':
            return self.theta()
        if part == 'all':
            return self.phi() + self.theta()
        raise ValueError(f"Unknown part: {part}. Options: {PARTS}")

    def manifest(self) -> dict:
        return {
            'arch_id': self.arch_id,
            'head_width': self.head_width,
            'input_shape': list(self.input_shape),
            'arch_kwargs': self.arch_kwargs,
        }

    def __repr__(self) -> str:
        return f"ExpertModel(arch={self.arch_id}, input={self.input_shape}, head_width={self.head_width})"


def build_model(
    arch_id: str,
    input_shape: Sequence[int],
    head_width: int,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    device: Union[str, torch.device] = 'cpu',
    **arch_kwargs
) -> ExpertModel:
    """
    Construct an ExpertModel with seeded initialization.

    Raises:
        ConfigInvalid: If arch_id is unknown
    """
    if arch_id not in ARCHITECTURES:
        raise ConfigInvalid(f"Unknown architecture: {arch_id}. Options: {list(ARCHITECTURES)}")
    with torch_seed(seed):
        features = ARCHITECTURES[arch_id](input_shape, **arch_kwargs)
        model = ExpertModel(features, head_width, arch_id, input_shape, arch_kwargs)
    return model.to(device=device, dtype=dtype)


def to_tensor(x, model: nn.Module) -> torch.Tensor:
    """Convert inputs to a tensor on the model's device and dtype."""
    reference = next(model.parameters())
    if torch.is_tensor(x):
        return x.to(dtype=reference.dtype, device=reference.device)
    return torch.tensor(np.asarray(x), dtype=reference.dtype, device=reference.device)


def forward(model: ExpertModel, x) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Compute (features h, logits) for a batch.

    Raises:
        ShapeMismatch: If the per-sample shape differs from the model's input contract
    """
    x = to_tensor(x, model)
    if tuple(x.shape[1:]) != model.input_shape:
        raise ShapeMismatch(
            f"{model.arch_id} expects inputs of shape {model.input_shape}, got {tuple(x.shape[1:])}"
        )
    return model(x)


def clone(model: ExpertModel) -> ExpertModel:
    """Deep, independent copy."""
    return copy.deepcopy(model)


def grow_head(
    model: ExpertModel,
    new_classes: int,
    seed: int = 0,
    init_scale: float = 0.01,
    zero_init: bool = False
) -> ExpertModel:
    """
    Return a copy with `new_classes` extra head rows.

    Existing rows and biases are copied bitwise. New rows are drawn from
    N(0, init_scale^2) (or zero with zero_init); new biases are zero.
    """
    if new_classes <= 0:
        raise ValueError(f"new_classes must be positive, got {new_classes}")

    grown = clone(model)
    old = grown.head
    weight, bias = old.weight.detach(), old.bias.detach()
    head = nn.Linear(old.in_features, old.out_features + new_classes,
                     dtype=weight.dtype, device=weight.device)

    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        if zero_init:
            new_rows = torch.zeros(new_classes, old.in_features, dtype=weight.dtype)
        else:
            new_rows = torch.randn(new_classes, old.in_features, generator=generator,
                                   dtype=weight.dtype) * init_scale
        head.weight.copy_(torch.cat([weight, new_rows.to(weight.device)]))
        head.bias.copy_(torch.cat([bias, torch.zeros(new_classes, dtype=bias.dtype, device=bias.device)]))

    grown.head = head
    logger.debug(f"Grew head {old.out_features} -> {head.out_features}")
    return grown


def average_weights(models: List[ExpertModel]) -> ExpertModel:
    """
    Elementwise arithmetic mean of every weight array (buffers included).

    Computed as m_0 + Σ(m_i - m_0)/n so a list of identical models averages
    to the first model bitwise. Integer buffers are taken from the first model.

    Raises:
        HeterogeneousModels: If arch_id, head_width or array shapes differ
    """
    if not models:
        raise HeterogeneousModels("Cannot average an empty list of models")

    first = models[0]
    for other in models[1:]:
        if other.arch_id != first.arch_id or other.head_width != first.head_width:
            raise HeterogeneousModels(
                f"Cannot average {other.arch_id}/{other.head_width} with "
                f"{first.arch_id}/{first.head_width}"
            )

    states = [m.state_dict() for m in models]
    anchor = states[0]
    averaged: Dict[str, torch.Tensor] = {}
    for name, base in anchor.items():
        if not torch.is_floating_point(base):
            averaged[name] = base.clone()
            continue
        offset = torch.zeros_like(base)
        for state in states[1:]:
            if state[name].shape != base.shape:
                raise HeterogeneousModels(f"Shape mismatch for {name}")
            offset += state[name] - base
        averaged[name] = base + offset / len(states)

    result = clone(first)
    result.load_state_dict(averaged)
    return result


@dataclass
class FlatWeights:
    """
    Weights packed into one contiguous vector.

    Attributes:
        values: 1-D tensor
        layout: (parameter name, shape, offset) for every packed array
        part: 'phi', 'theta' or 'all'
    """
    values: torch.Tensor
    layout: List[Tuple[str, Tuple[int, ...], int]]
    part: str = 'all'

    def __len__(self) -> int:
        return int(self.values.numel())


def flatten(model: ExpertModel, part: str = 'all') -> FlatWeights:
    """Pack the parameters of φ, θ or both into a FlatWeights."""
    layout = []
    chunks = []
    offset = 0
    for name, param in model.part(part):
        layout.append((name, tuple(param.shape), offset))
        chunks.append(param.detach().reshape(-1))
        offset += param.numel()
    values = torch.cat(chunks).clone() if chunks else torch.zeros(0)
    return FlatWeights(values=values, layout=layout, part=part)


def unflatten(flat: FlatWeights, arch: ExpertModel) -> ExpertModel:
    """
    Return a copy of `arch` whose parameters in flat.part come from `flat`.

    Raises:
        LayoutMismatch: If names, shapes or the vector length do not fit arch
    """
    params = arch.part(flat.part)
    expected = [(name, tuple(p.shape)) for name, p in params]
    declared = [(name, tuple(shape)) for name, shape, _ in flat.layout]
    if expected != declared:
        raise LayoutMismatch(f"Layout does not match {arch.arch_id}/{arch.head_width}")

    total = sum(p.numel() for _, p in params)
    if flat.values.numel() != total:
        raise LayoutMismatch(f"Expected {total} values, got {flat.values.numel()}")

    result = clone(arch)
    targets = dict(result.part(flat.part))
    with torch.no_grad():
        for name, shape, offset in flat.layout:
            size = int(np.prod(shape)) if shape else 1
            targets[name].copy_(flat.values[offset:offset + size].reshape(shape))
    return result


def save_checkpoint(model: ExpertModel, path: Union[str, Path], stage: Optional[int] = None) -> Path:
    """Write state dict plus manifest (arch_id, head_width, stage, ...)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = model.manifest()
    manifest['stage'] = stage
    torch.save({'state_dict': model.state_dict(), 'manifest': manifest}, path)
    return path


def load_checkpoint(path: Union[str, Path], device: Union[str, torch.device] = 'cpu') -> Tuple[ExpertModel, dict]:
    """Rebuild an ExpertModel from a checkpoint written by save_checkpoint."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    checkpoint = torch.load(path, map_location=device, weights_only=False)
    manifest = checkpoint['manifest']
    state = checkpoint['state_dict']
    dtype = next(v.dtype for v in state.values() if torch.is_floating_point(v))
    model = build_model(manifest['arch_id'], manifest['input_shape'], manifest['head_width'],
                        dtype=dtype, device=device, **manifest.get('arch_kwargs', {}))
    model.load_state_dict(state)
    return model, manifest

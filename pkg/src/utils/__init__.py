"""Shared utilities: errors, seeding, configuration and logging."""

from .config import load_config, merge_config
from .seeding import derive_rng, seed_everything, torch_seed

__all__ = [
    "load_config",
    "merge_config",
    "derive_rng",
    "seed_everything",
    "torch_seed",
]

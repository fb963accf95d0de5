"""Seed derivation helpers shared by data, memory and training code."""

import random
from contextlib import contextmanager
from typing import Iterator

import numpy as np
import torch


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Build an independent numpy generator for (seed, *keys).

    Different key tuples give statistically independent streams, so e.g. the
    batch at step 7 never depends on how many batches were drawn before it.
    """
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch global generators."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


@contextmanager
def torch_seed(seed: int) -> Iterator[None]:
    """Run a block under a fixed torch seed without disturbing the global stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield

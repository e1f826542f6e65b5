"""Seeding and RNG state helpers."""

import random

import numpy as np
import torch

DEFAULT_NUM_THREADS = torch.get_num_threads()


def seed_everything(seed: int, deterministic: bool = False) -> None:
    """Seed python, numpy and torch global generators.

    The deterministic-kernel flag and the torch thread count are process-wide;
    each call sets both from ``deterministic``, so a later non-deterministic
    call restores the defaults.

    Args:
        seed: Seed value.
        deterministic: Also force deterministic kernels and a single thread.
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)
    torch.set_num_threads(1 if deterministic else DEFAULT_NUM_THREADS)


def torch_rng_state() -> torch.Tensor:
    """Snapshot of the global torch CPU generator."""
    return torch.get_rng_state().clone()


def restore_torch_rng_state(state: torch.Tensor) -> None:
    """Restore a snapshot taken by ``torch_rng_state``."""
    torch.set_rng_state(state.to(torch.uint8).cpu())

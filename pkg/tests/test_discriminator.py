"""Tests for the conditional patch discriminator."""

import pytest
import torch

from modalmap.errors import ShapeError
from modalmap.models.discriminator import (
    DiscriminatorConfig,
    PatchDiscriminator,
    discriminator_forward,
    patch_grid_size,
)
from tests.mocks import TINY_DISCRIMINATOR


def test_patch_grid_size() -> None:
    """Test the logit grid side for common configurations."""
    assert patch_grid_size(256, 3) == 30
    assert patch_grid_size(16, 2) == 2
    assert patch_grid_size(64, 3) == 6


def test_logit_shape() -> None:
    """Test one logit per patch and image."""
    torch.manual_seed(0)
    discriminator = PatchDiscriminator(TINY_DISCRIMINATOR)
    logits = discriminator_forward(
        discriminator, torch.zeros(2, 3, 16, 16), torch.zeros(2, 3, 16, 16)
    )
    assert logits.shape == (2, 1, 2, 2)


def test_input_order_matters() -> None:
    """Test (ear, face) and (face, ear) are judged differently."""
    torch.manual_seed(1)
    discriminator = PatchDiscriminator(TINY_DISCRIMINATOR)
    ear = torch.rand(1, 3, 16, 16) * 2 - 1
    face = torch.rand(1, 3, 16, 16) * 2 - 1
    assert not torch.allclose(discriminator(ear, face), discriminator(face, ear))


def test_misaligned_inputs() -> None:
    """Test spatial and batch mismatches are rejected."""
    discriminator = PatchDiscriminator(TINY_DISCRIMINATOR)
    with pytest.raises(ShapeError, match="not aligned"):
        discriminator(torch.zeros(1, 3, 16, 16), torch.zeros(1, 3, 32, 32))
    with pytest.raises(ShapeError, match="batch sizes"):
        discriminator(torch.zeros(2, 3, 16, 16), torch.zeros(1, 3, 16, 16))


def test_config_round_trip() -> None:
    """Test dict conversion and validation."""
    cfg = DiscriminatorConfig(n_layers=4, base_channels=16)
    assert DiscriminatorConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="n_layers"):
        DiscriminatorConfig(n_layers=0)

"""Conditional patch discriminator judging (ear, face) pairs."""

from dataclasses import dataclass
from typing import Any

import torch
import torch.nn as nn

from modalmap.errors import ShapeError


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Patch discriminator architecture.

    ``n_layers = 3`` gives the 70x70 receptive field.
    """

    n_layers: int = 3
    base_channels: int = 64
    ear_channels: int = 3
    face_channels: int = 3

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ValueError("n_layers must be at least 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_layers": self.n_layers,
            "base_channels": self.base_channels,
            "ear_channels": self.ear_channels,
            "face_channels": self.face_channels,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DiscriminatorConfig":
        return cls(
            n_layers=int(data.get("n_layers", 3)),
            base_channels=int(data.get("base_channels", 64)),
            ear_channels=int(data.get("ear_channels", 3)),
            face_channels=int(data.get("face_channels", 3)),
        )


def patch_grid_size(size: int, n_layers: int) -> int:
    """Side length of the logit grid for a square input of side ``size``.

    ``n_layers`` stride-2 4x4 convolutions (padding 1) halve the side, then two
    stride-1 4x4 convolutions (padding 1) each remove one.
    """
    for _ in range(n_layers):
        size = (size + 2 - 4) // 2 + 1
    return size - 2


class PatchDiscriminator(nn.Module):
    """PatchGAN discriminator over the channel concatenation [ear, face]."""

    def __init__(self, config: DiscriminatorConfig) -> None:
        super().__init__()
        self.config = config
        ndf = config.base_channels

        layers: list[nn.Module] = [
            nn.Conv2d(config.ear_channels + config.face_channels, ndf, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        ]
        mult = 1
        for n in range(1, config.n_layers):
            prev, mult = mult, min(2**n, 8)
            layers += [
                nn.Conv2d(ndf * prev, ndf * mult, 4, stride=2, padding=1),
                nn.InstanceNorm2d(ndf * mult),
                nn.LeakyReLU(0.2),
            ]
        prev, mult = mult, min(2**config.n_layers, 8)
        layers += [
            nn.Conv2d(ndf * prev, ndf * mult, 4, stride=1, padding=1),
            nn.InstanceNorm2d(ndf * mult),
            nn.LeakyReLU(0.2),
            nn.Conv2d(ndf * mult, 1, 4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, ear: torch.Tensor, face: torch.Tensor) -> torch.Tensor:
        """Patch logits for a batch of (ear, face) pairs; order of arguments matters."""
        if ear.shape[0] != face.shape[0]:
            raise ShapeError(f"batch sizes differ: ear {ear.shape[0]} vs face {face.shape[0]}")
        if ear.shape[-2:] != face.shape[-2:]:
            raise ShapeError(
                f"ear {tuple(ear.shape[-2:])} and face {tuple(face.shape[-2:])} are not aligned"
            )
        return self.model(torch.cat([ear, face], dim=1))  # type: ignore[no-any-return]


def discriminator_forward(
    discriminator: PatchDiscriminator, ear_batch: torch.Tensor, face_batch: torch.Tensor
) -> torch.Tensor:
    """Patch logits N x 1 x h x w for aligned ear/face batches."""
    return discriminator(ear_batch, face_batch)  # type: ignore[no-any-return]

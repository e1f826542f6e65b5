"""Fixed perceptual embedding network (psi) ending in global average pooling."""

import hashlib
import math
from dataclasses import dataclass
from typing import Any, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from modalmap.errors import ShapeError


@dataclass(frozen=True)
class EmbeddingConfig:
    """Architecture of the builtin embedding network.

    Four 3x3 stride-2 convolution blocks with tanh activations, the last one
    producing ``embedding_dim`` channels, followed by global average pooling.
    """

    embedding_dim: int = 128
    widths: tuple[int, int, int] = (32, 64, 128)
    in_channels: int = 3
    seed: int = 7
    input_size: Optional[int] = None  # resize inputs to this side before the stack

    def __post_init__(self) -> None:
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "embedding_dim": self.embedding_dim,
            "widths": list(self.widths),
            "in_channels": self.in_channels,
            "seed": self.seed,
            "input_size": self.input_size,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EmbeddingConfig":
        widths = tuple(int(w) for w in data.get("widths", (32, 64, 128)))
        if len(widths) != 3:
            raise ValueError("widths must list three block widths")
        size = data.get("input_size")
        return cls(
            embedding_dim=int(data.get("embedding_dim", 128)),
            widths=(widths[0], widths[1], widths[2]),
            in_channels=int(data.get("in_channels", 3)),
            seed=int(data.get("seed", 7)),
            input_size=None if size is None else int(size),
        )


class EmbeddingNetwork(nn.Module):
    """Frozen feature extractor psi.

    Weights are drawn from a private generator seeded with ``config.seed``
    and never require gradients; gradients still flow to the input.
    """

    def __init__(self, config: EmbeddingConfig) -> None:
        super().__init__()
        self.config = config
        channels = [config.in_channels, *config.widths, config.embedding_dim]
        blocks: list[nn.Module] = []
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            blocks += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.Tanh()]
        self.features = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)

        self.reset_parameters()
        self.requires_grad_(False)
        self.eval()

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    @torch.no_grad()
    def reset_parameters(self) -> None:
        """Seeded deterministic initialisation (independent of the global RNG)."""
        gen = torch.Generator().manual_seed(self.config.seed)
        for module in self.features:
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                std = 1.0 / math.sqrt(fan_in)
                module.weight.copy_(torch.randn(module.weight.shape, generator=gen) * std)
                assert module.bias is not None
                module.bias.copy_(torch.randn(module.bias.shape, generator=gen) * 0.1)

    def train(self, mode: bool = True) -> "EmbeddingNetwork":
        # psi has no mode-dependent layers and stays in eval mode
        return super().train(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """N x C x H x W batch in [-1, 1] -> N x embedding_dim features."""
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"embedding expects N x {self.config.in_channels} x H x W, got {tuple(x.shape)}"
            )
        size = self.config.input_size
        if size is not None and x.shape[-2:] != (size, size):
            x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
        return torch.flatten(self.pool(self.features(x)), 1)

    def fingerprint(self) -> str:
        """SHA-256 over all parameter bytes, for frozen-weight checks."""
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()


def embed(psi: EmbeddingNetwork, face_batch: torch.Tensor) -> torch.Tensor:
    """Embed a face batch (network range) into one length-d vector per image."""
    return psi(face_batch)  # type: ignore[no-any-return]

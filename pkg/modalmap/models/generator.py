"""U-Net conditional generator (ear -> face)."""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable

import torch
import torch.nn as nn
import torch.nn.functional as F

from modalmap.errors import ShapeError


class Mode(Enum):
    """Forward mode of the generator."""

    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class GeneratorConfig:
    """U-Net generator architecture.

    ``depth`` down/up levels of 4x4 stride-2 convolutions; encoder level ``i``
    has ``base_channels * min(2**i, 8)`` channels. Dropout (the noise source
    z) sits in the decoder blocks listed in ``dropout_levels``, counted from
    the innermost decoder block.
    """

    depth: int = 6
    base_channels: int = 64
    dropout_rate: float = 0.5
    dropout_levels: tuple[int, ...] = (0, 1, 2)
    dropout_at_eval: bool = True
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if any(level < 0 for level in self.dropout_levels):
            raise ValueError("dropout_levels must be non-negative")

    def channels(self, level: int) -> int:
        """Channel count of encoder level ``level``."""
        return self.base_channels * min(2**level, 8)

    def check_size(self, height: int, width: int) -> None:
        """Raise ShapeError unless both sides are divisible by 2**depth."""
        factor = 2**self.depth
        if height % factor or width % factor or height < factor or width < factor:
            raise ShapeError(
                f"spatial size {height}x{width} is not a positive multiple of "
                f"2**depth = {factor}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "depth": self.depth,
            "base_channels": self.base_channels,
            "dropout_rate": self.dropout_rate,
            "dropout_levels": list(self.dropout_levels),
            "dropout_at_eval": self.dropout_at_eval,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GeneratorConfig":
        return cls(
            depth=int(data.get("depth", 6)),
            base_channels=int(data.get("base_channels", 64)),
            dropout_rate=float(data.get("dropout_rate", 0.5)),
            dropout_levels=tuple(int(x) for x in data.get("dropout_levels", (0, 1, 2))),
            dropout_at_eval=bool(data.get("dropout_at_eval", True)),
            in_channels=int(data.get("in_channels", 3)),
            out_channels=int(data.get("out_channels", 3)),
        )


class NoiseDropout(nn.Module):
    """Dropout that may stay active outside training mode."""

    def __init__(self, p: float, at_eval: bool) -> None:
        super().__init__()
        self.p = p
        self.at_eval = at_eval

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.p == 0.0:
            return x
        return F.dropout(x, self.p, training=self.training or self.at_eval)


class UNetGenerator(nn.Module):
    """pix2pix-style U-Net.

    Encoder feature ``i`` (0 = outermost) is concatenated onto the input of
    decoder block ``depth - 1 - i`` (0 = innermost), so the output keeps the
    input's spatial size.
    """

    def __init__(self, config: GeneratorConfig) -> None:
        super().__init__()
        self.config = config
        depth = config.depth

        encoders: list[nn.Module] = []
        for i in range(depth):
            in_ch = config.in_channels if i == 0 else config.channels(i - 1)
            layers: list[nn.Module] = []
            if i > 0:
                layers.append(nn.LeakyReLU(0.2))
            layers.append(nn.Conv2d(in_ch, config.channels(i), 4, stride=2, padding=1))
            # innermost feature is 1x1 at the minimum size; instance norm needs >1 element
            if 0 < i < depth - 1:
                layers.append(nn.InstanceNorm2d(config.channels(i)))
            encoders.append(nn.Sequential(*layers))
        self.encoders = nn.ModuleList(encoders)

        decoders: list[nn.Module] = []
        for k in range(depth):
            skip_level = depth - 1 - k
            if k == 0:
                in_ch = config.channels(depth - 1)
            else:
                in_ch = config.channels(skip_level) * 2
            layers = [nn.ReLU()]
            if k == depth - 1:
                layers += [
                    nn.ConvTranspose2d(in_ch, config.out_channels, 4, stride=2, padding=1),
                    nn.Tanh(),
                ]
            else:
                out_ch = config.channels(skip_level - 1)
                layers += [
                    nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1),
                    nn.InstanceNorm2d(out_ch),
                ]
                if k in config.dropout_levels:
                    layers.append(NoiseDropout(config.dropout_rate, config.dropout_at_eval))
            decoders.append(nn.Sequential(*layers))
        self.decoders = nn.ModuleList(decoders)

    def forward(self, x: torch.Tensor, zeroed_skips: Iterable[int] = ()) -> torch.Tensor:
        """Map an ear batch to a face batch.

        Args:
            x: N x C_in x H x W batch in [-1, 1].
            zeroed_skips: Encoder levels whose skip features are replaced by
                zeros (diagnostic ablation; the encoder path is unchanged).

        Returns:
            N x C_out x H x W batch in [-1, 1].
        """
        self.config.check_size(x.shape[-2], x.shape[-1])
        zeroed = set(zeroed_skips)

        features: list[torch.Tensor] = []
        h = x
        for encoder in self.encoders:
            h = encoder(h)
            features.append(h)

        depth = self.config.depth
        h = features[-1]
        for k, decoder in enumerate(self.decoders):
            if k > 0:
                level = depth - 1 - k
                skip = features[level]
                if level in zeroed:
                    skip = torch.zeros_like(skip)
                h = torch.cat([h, skip], dim=1)
            h = decoder(h)
        return h


def generator_forward(
    generator: UNetGenerator, ear_batch: torch.Tensor, mode: Mode = Mode.EVAL
) -> torch.Tensor:
    """Run the generator in the requested mode.

    Dropout stays on in eval mode unless the config disables it.

    Raises:
        ShapeError: If the spatial size is not divisible by 2**depth.
        ValueError: If the batch is outside [-1, 1].
    """
    if ear_batch.dim() != 4:
        raise ShapeError(f"expected an N x C x H x W batch, got {tuple(ear_batch.shape)}")
    generator.config.check_size(ear_batch.shape[-2], ear_batch.shape[-1])
    if not torch.isfinite(ear_batch).all() or ear_batch.abs().max() > 1.0 + 1e-6:
        raise ValueError("generator input must be finite and inside [-1, 1]")

    generator.train(mode is Mode.TRAIN)
    if mode is Mode.TRAIN:
        return generator(ear_batch)  # type: ignore[no-any-return]
    with torch.no_grad():
        return generator(ear_batch)  # type: ignore[no-any-return]

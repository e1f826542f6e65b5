"""Adversarial, pixel, feature and style losses and the composite objective.

Feature tensors are either pooled vectors (``d`` or ``N x d``, treated as
``d x 1 x 1`` maps) or spatial maps (``N x C x H x W``). The normaliser for
both the feature loss and the Gram matrix is ``C * H * W``.
"""

import math
from dataclasses import asdict, dataclass
from typing import Any, TypeVar, Union

import torch
import torch.nn.functional as F

from modalmap.errors import ShapeError

Scalar = TypeVar("Scalar", float, torch.Tensor)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the pixel (lambda), feature (beta) and style (gamma) terms."""

    pixel: float = 10.0
    feature: float = 0.25
    style: float = 0.1

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight '{name}' must be non-negative, got {value}")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LossWeights":
        return cls(
            pixel=float(data.get("pixel", 10.0)),
            feature=float(data.get("feature", 0.25)),
            style=float(data.get("style", 0.1)),
        )


@dataclass
class LossBreakdown:
    """Scalar loss components of one training step."""

    adversarial_g: float
    pixel: float
    feature: float
    style: float
    total_g: float
    adversarial_d: float = float("nan")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_logits(logits: torch.Tensor) -> None:
    if torch.isnan(logits).any():
        raise ValueError("logits contain NaN")


def adversarial_loss_d(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Discriminator BCE: real patches against 1 plus fake patches against 0.

    Each term is a mean over patches and batch, so all-zero logits give 2 ln 2.
    """
    _check_logits(real_logits)
    _check_logits(fake_logits)
    real = F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits))
    fake = F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
    return real + fake


def adversarial_loss_g(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss: fake patches against label 1."""
    _check_logits(fake_logits)
    return F.binary_cross_entropy_with_logits(fake_logits, torch.ones_like(fake_logits))


def pixel_loss(fake: torch.Tensor, real: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    if fake.shape != real.shape:
        raise ShapeError(f"pixel loss shapes differ: {tuple(fake.shape)} vs {tuple(real.shape)}")
    return (fake - real).abs().mean()


def _as_maps(feat: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Reshape features to N x C x (H*W) and return the C*H*W normaliser."""
    if feat.dim() == 1:
        feat = feat.unsqueeze(0)
    if feat.dim() == 2:
        maps = feat.unsqueeze(-1)
    elif feat.dim() == 4:
        maps = feat.flatten(2)
    else:
        raise ShapeError(f"features must be d, N x d or N x C x H x W, got {tuple(feat.shape)}")
    if maps.shape[1] < 1:
        raise ShapeError("feature dimension must be positive")
    return maps, maps.shape[1] * maps.shape[2]


def _check_pair(fake_feat: torch.Tensor, real_feat: torch.Tensor) -> None:
    if fake_feat.shape != real_feat.shape:
        raise ShapeError(
            f"feature shapes differ: {tuple(fake_feat.shape)} vs {tuple(real_feat.shape)}"
        )


def feature_loss(fake_feat: torch.Tensor, real_feat: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance divided by C*H*W, averaged over the batch."""
    _check_pair(fake_feat, real_feat)
    fake_maps, norm = _as_maps(fake_feat)
    real_maps, _ = _as_maps(real_feat)
    per_sample = (fake_maps - real_maps).pow(2).sum(dim=(1, 2)) / norm
    return per_sample.mean()


def gram(feat: torch.Tensor) -> torch.Tensor:
    """Gram matrix psi psi^T / (C*H*W).

    A single vector of length d gives a d x d matrix; batched input gives
    N x C x C.
    """
    maps, norm = _as_maps(feat)
    result = torch.bmm(maps, maps.transpose(1, 2)) / norm
    return result.squeeze(0) if feat.dim() == 1 else result


def style_loss(fake_feat: torch.Tensor, real_feat: torch.Tensor) -> torch.Tensor:
    """Squared Frobenius norm of the Gram difference, averaged over the batch."""
    _check_pair(fake_feat, real_feat)
    fake_maps, norm = _as_maps(fake_feat)
    real_maps, _ = _as_maps(real_feat)
    diff = (
        torch.bmm(fake_maps, fake_maps.transpose(1, 2))
        - torch.bmm(real_maps, real_maps.transpose(1, 2))
    ) / norm
    return diff.pow(2).sum(dim=(1, 2)).mean()


def composite_total(
    adversarial_g: Scalar, pixel: Scalar, feature: Scalar, style: Scalar, weights: LossWeights
) -> Scalar:
    """adversarial_g + lambda * pixel + beta * feature + gamma * style.

    Works on python floats and on tensors (for backpropagation).
    """
    return (
        adversarial_g
        + weights.pixel * pixel
        + weights.feature * feature
        + weights.style * style
    )


def composite_generator_loss(
    parts: dict[str, Union[float, torch.Tensor]], weights: LossWeights
) -> LossBreakdown:
    """Combine generator loss parts into a breakdown.

    Args:
        parts: ``adversarial_g``, ``pixel``, ``feature`` and ``style`` values.
        weights: Loss weights.

    Raises:
        ValueError: If a part is missing or not finite.
    """
    values: dict[str, float] = {}
    for name in ("adversarial_g", "pixel", "feature", "style"):
        if name not in parts:
            raise ValueError(f"missing loss part '{name}'")
        value = parts[name]
        number = float(value.item()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(number):
            raise ValueError(f"loss part '{name}' is not finite: {number}")
        values[name] = number

    return LossBreakdown(
        adversarial_g=values["adversarial_g"],
        pixel=values["pixel"],
        feature=values["feature"],
        style=values["style"],
        total_g=composite_total(
            values["adversarial_g"], values["pixel"], values["feature"], values["style"], weights
        ),
    )

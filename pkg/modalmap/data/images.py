"""Image ingestion: decoding, resizing and value-range mapping."""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from torch.utils.data import Dataset

from modalmap.data.manifest import DatasetManifest, ManifestEntry
from modalmap.errors import ImageLoadError


class ValueRange(Enum):
    """Declared value interval of an image tensor."""

    UNIT = "unit"  # [0, 1], used by metrics
    SIGNED = "signed"  # [-1, 1], used for network input/output

    @property
    def bounds(self) -> tuple[float, float]:
        return (0.0, 1.0) if self is ValueRange.UNIT else (-1.0, 1.0)


@dataclass(frozen=True)
class IngestConfig:
    """How image files become tensors."""

    target_size: int = 64
    value_range: ValueRange = ValueRange.SIGNED

    def __post_init__(self) -> None:
        if self.target_size < 1:
            raise ValueError("target_size must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {"target_size": self.target_size, "value_range": self.value_range.value}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "IngestConfig":
        return cls(
            target_size=int(data.get("target_size", 64)),
            value_range=ValueRange(data.get("value_range", "signed")),
        )


@dataclass
class PairedSample:
    """An ear image x and face image y of one subject."""

    ear: torch.Tensor
    face: torch.Tensor
    subject_id: str
    pair_id: str
    value_range: ValueRange = ValueRange.SIGNED

    def __post_init__(self) -> None:
        if self.ear.shape[-2:] != self.face.shape[-2:]:
            raise ImageLoadError(
                f"pair {self.pair_id}: ear {tuple(self.ear.shape)} and face "
                f"{tuple(self.face.shape)} differ spatially"
            )


def to_unit(image: torch.Tensor) -> torch.Tensor:
    """Map a [-1, 1] image into [0, 1]."""
    return ((image + 1.0) / 2.0).clamp(0.0, 1.0)


def to_signed(image: torch.Tensor) -> torch.Tensor:
    """Map a [0, 1] image into [-1, 1]."""
    return (image * 2.0 - 1.0).clamp(-1.0, 1.0)


def network_range(image: torch.Tensor, value_range: ValueRange) -> torch.Tensor:
    """Image in [-1, 1] regardless of its declared range."""
    return image if value_range is ValueRange.SIGNED else to_signed(image)


def unit_range(image: torch.Tensor, value_range: ValueRange) -> torch.Tensor:
    """Image in [0, 1] regardless of its declared range."""
    return image if value_range is ValueRange.UNIT else to_unit(image)


def check_range(image: torch.Tensor, value_range: ValueRange, atol: float = 1e-6) -> None:
    """Raise ValueError unless ``image`` is finite and inside its declared range."""
    if not torch.isfinite(image).all():
        raise ValueError("image contains NaN or infinite values")
    low, high = value_range.bounds
    if image.numel() and (image.min() < low - atol or image.max() > high + atol):
        raise ValueError(
            f"image values [{image.min().item():.4f}, {image.max().item():.4f}] "
            f"outside {value_range.value} range [{low}, {high}]"
        )


def load_image(path: Path, cfg: IngestConfig) -> torch.Tensor:
    """Decode an image file into a C x H x W tensor in the configured range.

    Images are converted to RGB and resized bilinearly to a square
    ``cfg.target_size``; an image already at that size is not resampled.

    Raises:
        ImageLoadError: If the file cannot be decoded or has zero size.
    """
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageLoadError(f"cannot decode {path}: {e}") from e

    if array.size == 0 or array.shape[0] == 0 or array.shape[1] == 0:
        raise ImageLoadError(f"zero-size image: {path}")

    tensor = torch.from_numpy(array / 255.0).permute(2, 0, 1).contiguous()
    size = cfg.target_size
    if tensor.shape[1:] != (size, size):
        tensor = F.interpolate(
            tensor.unsqueeze(0), size=(size, size), mode="bilinear", align_corners=False
        ).squeeze(0)
    tensor = tensor.clamp(0.0, 1.0)

    if cfg.value_range is ValueRange.SIGNED:
        tensor = to_signed(tensor)
    return tensor


def load_pair(entry: ManifestEntry, cfg: IngestConfig, root: Path) -> PairedSample:
    """Load both images of a manifest entry.

    Args:
        entry: Manifest entry.
        cfg: Ingestion settings.
        root: Directory the entry's paths are relative to.

    Returns:
        Paired sample with both images at ``cfg.target_size``.
    """
    return PairedSample(
        ear=load_image(root / entry.ear_path, cfg),
        face=load_image(root / entry.face_path, cfg),
        subject_id=entry.subject_id,
        pair_id=entry.pair_id,
        value_range=cfg.value_range,
    )


def load_pairs(
    manifest: DatasetManifest, pair_ids: set[str], cfg: IngestConfig
) -> list[PairedSample]:
    """Load the pairs of a split, ordered by pair id."""
    entries = sorted(manifest.select(pair_ids), key=lambda e: e.pair_id)
    return [load_pair(e, cfg, manifest.root) for e in entries]


def save_image(image: torch.Tensor, path: Path, value_range: ValueRange) -> None:
    """Write a C x H x W tensor as an 8-bit PNG."""
    if value_range is ValueRange.SIGNED:
        image = to_unit(image)
    array = (image.detach().cpu().clamp(0.0, 1.0) * 255.0).round().to(torch.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array.permute(1, 2, 0).numpy()).save(path, format="PNG")


class PairedDataset(Dataset[dict[str, Any]]):
    """Torch dataset over in-memory paired samples, yielding [-1, 1] tensors."""

    def __init__(self, samples: list[PairedSample]) -> None:
        self.samples = samples

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> dict[str, Any]:
        sample = self.samples[index]
        return {
            "ear": network_range(sample.ear, sample.value_range),
            "face": network_range(sample.face, sample.value_range),
            "subject_id": sample.subject_id,
            "pair_id": sample.pair_id,
        }

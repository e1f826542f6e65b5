"""Reconstruction metrics: pixel, feature and style differences, PSNR and SSIM.

All metrics take images in [0, 1]. Feature and style differences convert to
the network range before embedding with psi.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import pandas as pd
import torch
import torch.nn.functional as F

from modalmap.core.losses import feature_loss, pixel_loss, style_loss
from modalmap.data.images import (
    PairedSample,
    network_range,
    to_signed,
    to_unit,
    unit_range,
)
from modalmap.errors import MetricError
from modalmap.models.embedding import EmbeddingNetwork
from modalmap.utils.logging import get_logger

logger = get_logger("modalmap.eval")

METRIC_COLUMNS = ["pixel_diff", "feature_diff", "style_diff", "psnr_db", "ssim"]

Reconstructor = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class SsimConfig:
    """Gaussian-window SSIM constants."""

    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    max_val: float = 1.0

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        if self.sigma <= 0 or self.max_val <= 0:
            raise ValueError("sigma and max_val must be positive")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SsimConfig":
        return cls(
            window_size=int(data.get("window_size", 11)),
            sigma=float(data.get("sigma", 1.5)),
            k1=float(data.get("k1", 0.01)),
            k2=float(data.get("k2", 0.03)),
            max_val=float(data.get("max_val", 1.0)),
        )


def _check_shapes(fake: torch.Tensor, real: torch.Tensor) -> None:
    if fake.shape != real.shape:
        raise MetricError(f"image shapes differ: {tuple(fake.shape)} vs {tuple(real.shape)}")


def _batched(image: torch.Tensor) -> torch.Tensor:
    return image.unsqueeze(0) if image.dim() == 3 else image


def pixel_difference(fake: torch.Tensor, real: torch.Tensor) -> float:
    """Mean absolute difference of two [0, 1] images, in their own dtype like the pixel loss."""
    _check_shapes(fake, real)
    return float(pixel_loss(fake, real).item())


def _embed_pair(
    fake: torch.Tensor, real: torch.Tensor, psi: EmbeddingNetwork
) -> tuple[torch.Tensor, torch.Tensor]:
    _check_shapes(fake, real)
    with torch.no_grad():
        return psi(to_signed(_batched(fake))), psi(to_signed(_batched(real)))


def feature_difference(fake: torch.Tensor, real: torch.Tensor, psi: EmbeddingNetwork) -> float:
    """Feature reconstruction loss between the embeddings of two [0, 1] images."""
    fake_feat, real_feat = _embed_pair(fake, real, psi)
    return float(feature_loss(fake_feat, real_feat).item())


def style_difference(fake: torch.Tensor, real: torch.Tensor, psi: EmbeddingNetwork) -> float:
    """Style reconstruction loss between the embeddings of two [0, 1] images."""
    fake_feat, real_feat = _embed_pair(fake, real, psi)
    return float(style_loss(fake_feat, real_feat).item())


def psnr_from_mse(mse: float, max_val: float = 1.0) -> float:
    """10 log10(max_val^2 / mse); +inf when mse is zero."""
    if max_val <= 0:
        raise MetricError("max_val must be positive")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def psnr(fake: torch.Tensor, real: torch.Tensor, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in decibels (+inf for identical images)."""
    _check_shapes(fake, real)
    mse = float((fake.double() - real.double()).pow(2).mean().item())
    return psnr_from_mse(mse, max_val)


def gaussian_window(size: int, sigma: float) -> torch.Tensor:
    """Normalised size x size Gaussian weights (float64)."""
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def _luma(image: torch.Tensor) -> torch.Tensor:
    """Channel mean of a C x H x W or H x W image, as 1 x 1 x H x W float64."""
    image = image.double()
    if image.dim() == 3:
        image = image.mean(dim=0)
    if image.dim() != 2:
        raise MetricError(f"expected C x H x W or H x W image, got {tuple(image.shape)}")
    return image.unsqueeze(0).unsqueeze(0)


def ssim(fake: torch.Tensor, real: torch.Tensor, cfg: Optional[SsimConfig] = None) -> float:
    """Mean SSIM over all valid (unpadded) Gaussian windows, computed on luma.

    Raises:
        MetricError: If the images differ in shape or are smaller than the window.
    """
    cfg = cfg or SsimConfig()
    _check_shapes(fake, real)
    x, y = _luma(fake), _luma(real)
    if x.shape[-1] < cfg.window_size or x.shape[-2] < cfg.window_size:
        raise MetricError(
            f"image {tuple(x.shape[-2:])} is smaller than the {cfg.window_size}x"
            f"{cfg.window_size} window"
        )

    window = gaussian_window(cfg.window_size, cfg.sigma).view(
        1, 1, cfg.window_size, cfg.window_size
    )
    c1 = (cfg.k1 * cfg.max_val) ** 2
    c2 = (cfg.k2 * cfg.max_val) ** 2

    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    var_x = F.conv2d(x * x, window) - mu_x**2
    var_y = F.conv2d(y * y, window) - mu_y**2
    cov = F.conv2d(x * y, window) - mu_x * mu_y

    index = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(index.mean().clamp(-1.0, 1.0).item())


@dataclass
class PairMetrics:
    """All five metrics for one reconstructed pair."""

    pair_id: str
    subject_id: str
    pixel_diff: float
    feature_diff: float
    style_diff: float
    psnr_db: float
    ssim: float


@dataclass
class MetricsReport:
    """Per-set means of the five metrics plus the per-pair table."""

    rows: list[PairMetrics] = field(default_factory=list)
    labels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.rows:
            raise MetricError("metrics report needs at least one pair")

    @property
    def n_pairs(self) -> int:
        return len(self.rows)

    def _mean(self, column: str) -> float:
        values = [getattr(r, column) for r in self.rows]
        if column == "psnr_db":
            values = [v for v in values if math.isfinite(v)]
            if not values:
                return math.inf
        return math.fsum(values) / len(values)

    @property
    def pixel_diff(self) -> float:
        return self._mean("pixel_diff")

    @property
    def feature_diff(self) -> float:
        return self._mean("feature_diff")

    @property
    def style_diff(self) -> float:
        return self._mean("style_diff")

    @property
    def psnr_db(self) -> float:
        """Mean PSNR over pairs with finite PSNR."""
        return self._mean("psnr_db")

    @property
    def ssim(self) -> float:
        return self._mean("ssim")

    @property
    def psnr_excluded(self) -> int:
        """Pairs with identical images (infinite PSNR) left out of the PSNR mean."""
        return sum(1 for r in self.rows if not math.isfinite(r.psnr_db))

    def filtered(self, pair_ids: set[str], **labels: str) -> "MetricsReport":
        """Report restricted to ``pair_ids`` (no re-evaluation)."""
        return MetricsReport(
            rows=[r for r in self.rows if r.pair_id in pair_ids],
            labels={**self.labels, **labels},
        )

    def to_frame(self) -> pd.DataFrame:
        """Per-pair table with ``pair_id`` and the five metric columns."""
        return pd.DataFrame(
            [{"pair_id": r.pair_id, **{c: getattr(r, c) for c in METRIC_COLUMNS}}
             for r in self.rows],
            columns=["pair_id", *METRIC_COLUMNS],
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.labels,
            "n_pairs": self.n_pairs,
            "pixel_diff": self.pixel_diff,
            "feature_diff": self.feature_diff,
            "style_diff": self.style_diff,
            "psnr_db": None if math.isinf(self.psnr_db) else self.psnr_db,
            "psnr_excluded": self.psnr_excluded,
            "ssim": self.ssim,
        }

    def save(self, json_path: Path) -> tuple[Path, Path]:
        """Write the JSON summary and its per-pair CSV sidecar (same stem)."""
        json_path.parent.mkdir(parents=True, exist_ok=True)
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        csv_path = json_path.with_suffix(".csv")
        self.to_frame().to_csv(csv_path, index=False, lineterminator="\n", float_format="%.10g")
        return json_path, csv_path


def reconstruct(
    generator: Reconstructor, pairs: list[PairedSample], batch_size: int = 8
) -> list[torch.Tensor]:
    """Generator outputs for each pair's ear, mapped to [0, 1].

    Modules are switched to eval mode; dropout configured to stay on at eval
    keeps sampling noise.
    """
    if isinstance(generator, torch.nn.Module):
        generator.eval()
    outputs: list[torch.Tensor] = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            ears = torch.stack([network_range(p.ear, p.value_range) for p in chunk])
            fakes = generator(ears)
            outputs.extend(to_unit(f) for f in fakes)
    return outputs


def evaluate_set(
    generator: Reconstructor,
    psi: EmbeddingNetwork,
    pairs: list[PairedSample],
    ssim_config: Optional[SsimConfig] = None,
    batch_size: int = 8,
    **labels: str,
) -> MetricsReport:
    """Reconstruct every face from its ear and score all five metrics.

    Raises:
        MetricError: If ``pairs`` is empty.
    """
    if not pairs:
        raise MetricError("cannot evaluate an empty set")
    ssim_config = ssim_config or SsimConfig()

    fakes = reconstruct(generator, pairs, batch_size)
    rows: list[PairMetrics] = []
    for pair, fake in zip(pairs, fakes):
        real = unit_range(pair.face, pair.value_range)
        fake = fake.to(real.dtype)
        rows.append(
            PairMetrics(
                pair_id=pair.pair_id,
                subject_id=pair.subject_id,
                pixel_diff=pixel_difference(fake, real),
                feature_diff=feature_difference(fake, real, psi),
                style_diff=style_difference(fake, real, psi),
                psnr_db=psnr(fake, real, ssim_config.max_val),
                ssim=ssim(fake, real, ssim_config),
            )
        )

    report = MetricsReport(rows=rows, labels=dict(labels))
    logger.info(
        f"Evaluated {report.n_pairs} pairs | pixel {report.pixel_diff:.4f} | "
        f"ssim {report.ssim:.4f} | psnr {report.psnr_db:.2f} dB "
        f"({report.psnr_excluded} excluded)"
    )
    return report

"""Qualitative triptych grids: input ear, reconstruction and target face."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from modalmap.data.images import PairedSample, unit_range
from modalmap.eval.metrics import Reconstructor, reconstruct
from modalmap.utils.logging import get_logger

logger = get_logger("modalmap.eval")

ROWS = ("ear", "output", "target")


def to_pixels(image: torch.Tensor) -> np.ndarray:
    """[0, 1] C x H x W tensor to an H x W x 3 uint8 array."""
    array = (image.detach().cpu().clamp(0.0, 1.0) * 255.0).round().to(torch.uint8)
    return array.permute(1, 2, 0).numpy()


@dataclass
class GridResult:
    """Written grid and any individually saved cells."""

    path: Path
    pair_ids: list[str]
    individual: list[Path]


def compose_grid(columns: list[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> np.ndarray:
    """Stack triptychs as columns: rows are ear, output and target.

    Every cell must share one H x W x 3 shape; the result is 3H x nW x 3.
    """
    if not columns:
        raise ValueError("grid needs at least one pair")
    shape = columns[0][0].shape
    for cells in columns:
        for cell in cells:
            if cell.shape != shape:
                raise ValueError(f"grid cell shape {cell.shape} differs from {shape}")
    return np.concatenate([np.concatenate(cells, axis=0) for cells in columns], axis=1)


def write_grid(
    generator: Reconstructor,
    pairs: list[PairedSample],
    path: Path,
    save_individual: bool = False,
) -> GridResult:
    """Reconstruct ``pairs`` and write their triptych grid as a PNG.

    Args:
        generator: Ear-to-face reconstructor, run in eval mode.
        pairs: Pairs to show, one column each, in the given order.
        path: Output PNG.
        save_individual: Also write each reconstruction to
            ``<path stem>_cells/<pair_id>.png``.
    """
    fakes = reconstruct(generator, pairs)
    columns = []
    for pair, fake in zip(pairs, fakes):
        columns.append((
            to_pixels(unit_range(pair.ear, pair.value_range)),
            to_pixels(fake),
            to_pixels(unit_range(pair.face, pair.value_range)),
        ))

    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(compose_grid(columns)).save(path, format="PNG")

    individual: list[Path] = []
    if save_individual:
        cell_dir = path.parent / f"{path.stem}_cells"
        cell_dir.mkdir(parents=True, exist_ok=True)
        for pair, (_, output, _) in zip(pairs, columns):
            cell_path = cell_dir / f"{pair.pair_id}.png"
            Image.fromarray(output).save(cell_path, format="PNG")
            individual.append(cell_path)

    logger.info(f"Wrote grid of {len(pairs)} triptychs to {path}")
    return GridResult(path=path, pair_ids=[p.pair_id for p in pairs], individual=individual)

"""Tests for image ingestion."""

from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from modalmap.data.images import (
    IngestConfig,
    PairedDataset,
    PairedSample,
    ValueRange,
    check_range,
    load_image,
    load_pair,
    save_image,
    to_signed,
    to_unit,
)
from modalmap.data.manifest import ManifestEntry
from modalmap.errors import ImageLoadError
from tests.mocks import random_image, write_png


def test_load_image_unit_range(tmp_path: Path) -> None:
    """Test decoding into [0, 1] without resampling."""
    pixels = write_png(tmp_path / "a.png", size=16, seed=1)
    cfg = IngestConfig(target_size=16, value_range=ValueRange.UNIT)
    image = load_image(tmp_path / "a.png", cfg)
    assert image.shape == (3, 16, 16)
    expected = torch.from_numpy(pixels).permute(2, 0, 1).float() / 255.0
    assert torch.allclose(image, expected, atol=1e-6)
    check_range(image, ValueRange.UNIT)


def test_load_image_signed_and_resized(tmp_path: Path) -> None:
    """Test resizing to the target size and mapping to [-1, 1]."""
    write_png(tmp_path / "a.png", size=20, seed=2)
    image = load_image(tmp_path / "a.png", IngestConfig(target_size=8))
    assert image.shape == (3, 8, 8)
    check_range(image, ValueRange.SIGNED)


def test_load_grayscale_becomes_rgb(tmp_path: Path) -> None:
    """Test single-channel images are converted to three channels."""
    Image.new("L", (8, 8), color=128).save(tmp_path / "g.png")
    cfg = IngestConfig(target_size=8, value_range=ValueRange.UNIT)
    image = load_image(tmp_path / "g.png", cfg)
    assert image.shape == (3, 8, 8)
    assert torch.allclose(image, torch.full((3, 8, 8), 128 / 255.0))


def test_undecodable_file(tmp_path: Path) -> None:
    """Test a corrupt file raises ImageLoadError."""
    path = tmp_path / "bad.png"
    path.write_bytes(b"not an image")
    with pytest.raises(ImageLoadError, match="cannot decode"):
        load_image(path, IngestConfig())


def test_load_pair(tmp_path: Path) -> None:
    """Test both modalities are loaded at the same size."""
    write_png(tmp_path / "ear" / "p.png", size=12, seed=3)
    write_png(tmp_path / "face" / "p.png", size=24, seed=4)
    entry = ManifestEntry(
        pair_id="p", subject_id="s", ear_path="ear/p.png", face_path="face/p.png"
    )
    pair = load_pair(entry, IngestConfig(target_size=16), tmp_path)
    assert pair.ear.shape == pair.face.shape == (3, 16, 16)
    assert pair.subject_id == "s"


def test_pair_spatial_mismatch() -> None:
    """Test ear and face must share spatial size."""
    with pytest.raises(ImageLoadError, match="differ spatially"):
        PairedSample(
            ear=torch.zeros(3, 8, 8), face=torch.zeros(3, 16, 16), subject_id="s", pair_id="p"
        )


def test_range_mapping() -> None:
    """Test unit and signed conversions."""
    image = random_image(8, seed=5, value_range=ValueRange.UNIT)
    assert torch.allclose(to_unit(to_signed(image)), image, atol=1e-6)
    assert to_signed(torch.zeros(1)).item() == -1.0
    assert to_unit(torch.ones(1)).item() == 1.0


def test_check_range_rejects_values() -> None:
    """Test out-of-range and non-finite values are rejected."""
    with pytest.raises(ValueError, match="outside"):
        check_range(torch.tensor([1.5]), ValueRange.UNIT)
    with pytest.raises(ValueError, match="NaN"):
        check_range(torch.tensor([float("nan")]), ValueRange.SIGNED)


def test_save_image_round_trip(tmp_path: Path) -> None:
    """Test an 8-bit image survives save and load exactly."""
    pixels = write_png(tmp_path / "src.png", size=8, seed=6)
    cfg = IngestConfig(target_size=8, value_range=ValueRange.SIGNED)
    image = load_image(tmp_path / "src.png", cfg)
    save_image(image, tmp_path / "out.png", ValueRange.SIGNED)
    assert (np.asarray(Image.open(tmp_path / "out.png")) == pixels).all()


def test_dataset_yields_network_range() -> None:
    """Test the torch dataset converts unit-range samples to [-1, 1]."""
    face = random_image(8, seed=7, value_range=ValueRange.UNIT)
    sample = PairedSample(
        ear=face, face=face, subject_id="s", pair_id="p", value_range=ValueRange.UNIT
    )
    item = PairedDataset([sample])[0]
    assert torch.allclose(item["face"], to_signed(face))
    assert item["pair_id"] == "p"

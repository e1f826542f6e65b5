"""Procedural paired ear/face dataset for desk-scale experiments.

Each subject owns a latent identity vector ``z`` of eight values drawn
uniformly from [0, 1). Both modalities are fixed, deterministic renderings of
``z``; only the per-pair nuisance (sub-pixel translation of up to
``max_shift`` pixels and a brightness gain in ``1 +/- brightness_jitter``)
differs between pairs of one subject.

Latent usage, family ``a``:

* face: z0..z2 skin colour, z3/z4 head width/height, z5 eye spacing,
  z6 eye size, z7 mouth width; hair colour mixes z2, z0 and z5.
* ear: z0..z2 skin colour, z3/z4 outer ear width/height, z5 concha offset,
  z6 helix rim thickness, z7 lobe size.

Family ``b`` renders the same latents differently (permuted colour channels,
a squarer head, vertical gradient background, mirrored ear), so a model
trained on one family can be evaluated on the other.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from modalmap.data.manifest import DatasetManifest, ManifestEntry, save_manifest
from modalmap.errors import SynthesisError
from modalmap.utils.logging import get_logger

logger = get_logger("modalmap.data")

LATENT_DIM = 8
FAMILIES = ("a", "b")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic dataset parameters."""

    n_subjects: int = 20
    pairs_per_subject: int = 5
    image_size: int = 64
    seed: int = 0
    family: str = "a"
    max_shift: float = 2.0
    brightness_jitter: float = 0.05

    def __post_init__(self) -> None:
        if self.n_subjects < 2:
            raise ValueError("n_subjects must be at least 2")
        if self.pairs_per_subject < 1:
            raise ValueError("pairs_per_subject must be at least 1")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_subjects": self.n_subjects,
            "pairs_per_subject": self.pairs_per_subject,
            "image_size": self.image_size,
            "seed": self.seed,
            "family": self.family,
            "max_shift": self.max_shift,
            "brightness_jitter": self.brightness_jitter,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SynthConfig":
        return cls(
            n_subjects=int(data.get("n_subjects", 20)),
            pairs_per_subject=int(data.get("pairs_per_subject", 5)),
            image_size=int(data.get("image_size", 64)),
            seed=int(data.get("seed", 0)),
            family=str(data.get("family", "a")),
            max_shift=float(data.get("max_shift", 2.0)),
            brightness_jitter=float(data.get("brightness_jitter", 0.05)),
        )


def _grid(size: int, shift: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Normalised coordinates in [-1, 1], translated by ``shift`` pixels."""
    axis = (np.arange(size, dtype=np.float64) + 0.5) / size * 2.0 - 1.0
    v, u = np.meshgrid(axis, axis, indexing="ij")
    return u - shift[0] * 2.0 / size, v - shift[1] * 2.0 / size


def _inside(signed_dist: np.ndarray, size: int) -> np.ndarray:
    """Soft inside mask: 1 well inside, 0 well outside, about one pixel of edge."""
    return 1.0 / (1.0 + np.exp(np.clip(signed_dist * size / 2.0, -50.0, 50.0)))


def _ellipse(u: np.ndarray, v: np.ndarray, cx: float, cy: float, rx: float, ry: float,
             power: float = 2.0) -> np.ndarray:
    """Approximate signed distance to a superellipse (negative inside)."""
    r = (np.abs((u - cx) / rx) ** power + np.abs((v - cy) / ry) ** power) ** (1.0 / power)
    return (r - 1.0) * min(rx, ry)


def _paint(canvas: np.ndarray, mask: np.ndarray, colour: np.ndarray) -> None:
    canvas *= 1.0 - mask[..., None]
    canvas += mask[..., None] * colour[None, None, :]


def render_face(z: np.ndarray, size: int, shift: tuple[float, float], family: str) -> np.ndarray:
    """Render the face modality of latent ``z`` as an H x W x 3 array in [0, 1]."""
    u, v = _grid(size, shift)
    if family == "a":
        skin = np.array([0.55 + 0.35 * z[0], 0.40 + 0.30 * z[1], 0.30 + 0.30 * z[2]])
        canvas = np.full((size, size, 3), 0.15)
        power = 2.0
    else:
        skin = np.array([0.55 + 0.35 * z[2], 0.40 + 0.30 * z[0], 0.30 + 0.30 * z[1]])
        canvas = np.repeat((0.25 + 0.35 * (v + 1.0) / 2.0)[..., None], 3, axis=2)
        power = 4.0
    hair = np.array([0.10 + 0.50 * z[2], 0.10 + 0.40 * z[0], 0.10 + 0.30 * z[5]])

    rx, ry = 0.55 + 0.20 * z[3], 0.70 + 0.15 * z[4]
    _paint(canvas, _inside(_ellipse(u, v, 0.0, -0.05, rx * 1.05, ry * 0.55, power), size)
           * (v < -0.25), hair)
    _paint(canvas, _inside(_ellipse(u, v, 0.0, 0.05, rx, ry, power), size), skin)

    spacing, eye_r = 0.20 + 0.15 * z[5], 0.06 + 0.05 * z[6]
    eye = np.array([0.05, 0.05, 0.08])
    for side in (-1.0, 1.0):
        _paint(canvas, _inside(_ellipse(u, v, side * spacing, -0.10, eye_r, eye_r * 0.8), size),
               eye)

    mouth_w = 0.15 + 0.20 * z[7]
    mouth = np.array([0.55, 0.15, 0.15]) if family == "a" else np.array([0.35, 0.10, 0.25])
    _paint(canvas, _inside(_ellipse(u, v, 0.0, 0.40, mouth_w, 0.05), size), mouth)
    return canvas


def render_ear(z: np.ndarray, size: int, shift: tuple[float, float], family: str) -> np.ndarray:
    """Render the ear modality of latent ``z`` as an H x W x 3 array in [0, 1]."""
    u, v = _grid(size, shift)
    if family == "b":
        u = -u
        skin = np.array([0.50 + 0.35 * z[2], 0.35 + 0.30 * z[0], 0.25 + 0.30 * z[1]])
        canvas = np.full((size, size, 3), 0.35)
    else:
        skin = np.array([0.55 + 0.35 * z[0], 0.40 + 0.30 * z[1], 0.30 + 0.30 * z[2]])
        canvas = np.full((size, size, 3), 0.20)

    rx, ry = 0.45 + 0.20 * z[3], 0.75 + 0.15 * z[4]
    outer = _ellipse(u, v, 0.0, 0.0, rx, ry)
    _paint(canvas, _inside(outer, size), skin)

    rim = 0.05 + 0.10 * z[6]
    inner = _ellipse(u, v, 0.0, 0.0, max(rx - rim, 0.05), max(ry - rim, 0.05))
    _paint(canvas, _inside(inner, size), skin * 0.80)

    concha_x = -0.10 + 0.25 * z[5]
    _paint(canvas, _inside(_ellipse(u, v, concha_x, 0.05, rx * 0.35, ry * 0.30), size),
           skin * 0.45)

    lobe = 0.10 + 0.15 * z[7]
    _paint(canvas, _inside(_ellipse(u, v, 0.0, ry * 0.80, lobe, lobe * 0.9), size), skin * 0.95)
    return canvas


def _to_png(array: np.ndarray, gain: float, path: Path) -> None:
    pixels = np.clip(np.round(np.clip(array * gain, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PNG")


def _shift(rng: np.random.Generator, max_shift: float) -> tuple[float, float]:
    dx, dy = rng.uniform(-max_shift, max_shift, size=2)
    return float(dx), float(dy)


def subject_latents(cfg: SynthConfig) -> np.ndarray:
    """Latent identity vectors, one row per subject."""
    rng = np.random.default_rng(cfg.seed)
    return rng.random((cfg.n_subjects, LATENT_DIM))


def generate_synthetic(cfg: SynthConfig, out_dir: Path) -> DatasetManifest:
    """Render a paired dataset and write its manifest.

    Layout: ``<out_dir>/ear/<pair_id>.png``, ``<out_dir>/face/<pair_id>.png``
    and ``<out_dir>/manifest.csv``.

    Args:
        cfg: Synthetic dataset parameters.
        out_dir: Destination directory.

    Returns:
        The manifest that was written.

    Raises:
        SynthesisError: If ``out_dir`` is not writable.
    """
    try:
        (out_dir / "ear").mkdir(parents=True, exist_ok=True)
        (out_dir / "face").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise SynthesisError(f"cannot create {out_dir}: {e}") from e

    latents = subject_latents(cfg)
    nuisance = np.random.default_rng([cfg.seed, 1])
    entries: list[ManifestEntry] = []
    width = len(str(cfg.n_subjects - 1))

    for s, z in enumerate(latents):
        subject_id = f"s{s:0{width}d}"
        for p in range(cfg.pairs_per_subject):
            pair_id = f"{subject_id}_p{p:02d}"
            ear_shift = _shift(nuisance, cfg.max_shift)
            face_shift = _shift(nuisance, cfg.max_shift)
            ear_gain, face_gain = 1.0 + nuisance.uniform(
                -cfg.brightness_jitter, cfg.brightness_jitter, size=2
            )
            ear_rel, face_rel = f"ear/{pair_id}.png", f"face/{pair_id}.png"
            try:
                _to_png(render_ear(z, cfg.image_size, ear_shift, cfg.family), ear_gain,
                        out_dir / ear_rel)
                _to_png(render_face(z, cfg.image_size, face_shift, cfg.family), face_gain,
                        out_dir / face_rel)
            except OSError as e:
                raise SynthesisError(f"cannot write images for {pair_id}: {e}") from e
            entries.append(
                ManifestEntry(
                    pair_id=pair_id, subject_id=subject_id, ear_path=ear_rel, face_path=face_rel
                )
            )

    manifest = DatasetManifest(dataset_name=out_dir.name, root=out_dir, entries=entries)
    try:
        save_manifest(manifest)
    except OSError as e:
        raise SynthesisError(f"cannot write manifest in {out_dir}: {e}") from e

    logger.info(
        f"Synthetic family {cfg.family}: {cfg.n_subjects} subjects x "
        f"{cfg.pairs_per_subject} pairs written to {out_dir}"
    )
    return manifest

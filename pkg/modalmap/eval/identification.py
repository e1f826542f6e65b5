"""Closed-set face identification: cosine similarity matrix and CMC curve.

Probes are faces reconstructed from ears (or real faces for the baseline),
the gallery holds real faces. A probe is correct at rank k when any gallery
image of its identity is among the k most similar; ties keep gallery order.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
import torch

from modalmap.data.images import PairedSample, network_range, to_signed
from modalmap.errors import IdentificationError, ZeroNormError
from modalmap.eval.metrics import Reconstructor, reconstruct
from modalmap.models.embedding import EmbeddingNetwork
from modalmap.utils.logging import get_logger

logger = get_logger("modalmap.identify")

DEFAULT_RANKS = (1, 2, 5, 10, 20)


class ProbeSource(Enum):
    """What the probe faces are."""

    RECONSTRUCTED = "reconstructed"
    REAL = "real"


@dataclass
class SimilarityMatrix:
    """Probe x gallery cosine similarities with identity labels."""

    values: np.ndarray
    probe_ids: list[str]
    gallery_ids: list[str]

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise IdentificationError("similarity values must be a 2-D matrix")
        if self.values.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise IdentificationError(
                f"matrix {self.values.shape} does not match {len(self.probe_ids)} probe "
                f"and {len(self.gallery_ids)} gallery labels"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.probe_ids), len(self.gallery_ids))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.probe_ids, columns=self.gallery_ids)

    def save_csv(self, path: Path) -> Path:
        """Dump the matrix; first column holds probe identities, header gallery identities."""
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = self.to_frame()
        frame.index.name = "probe_id"
        frame.to_csv(path, lineterminator="\n", float_format="%.10g")
        return path


@dataclass
class CmcCurve:
    """Rank-k identification accuracies."""

    ranks: list[int]
    accuracies: list[float]
    n_probe: int
    n_gallery: int
    excluded_probes: int = 0
    labels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.ranks) != len(self.accuracies):
            raise IdentificationError("ranks and accuracies differ in length")

    def accuracy_at(self, k: int) -> float:
        """Accuracy at a rank that was requested."""
        try:
            return self.accuracies[self.ranks.index(k)]
        except ValueError:
            raise IdentificationError(f"rank {k} was not computed") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.labels,
            "ranks": list(self.ranks),
            "accuracies": list(self.accuracies),
            "n_probe": self.n_probe,
            "n_gallery": self.n_gallery,
            "excluded_probes": self.excluded_probes,
        }

    def save(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def _as_matrix(feats: torch.Tensor | np.ndarray) -> np.ndarray:
    array = feats.detach().cpu().double().numpy() if isinstance(feats, torch.Tensor) else feats
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 1:
        array = array[np.newaxis, :]
    if array.ndim != 2:
        raise IdentificationError(f"features must be N x d, got shape {array.shape}")
    return array


def _unit_rows(feats: np.ndarray, ids: list[str], role: str) -> np.ndarray:
    norms = np.linalg.norm(feats, axis=1)
    for index, norm in enumerate(norms):
        if norm == 0.0 or not np.isfinite(norm):
            raise ZeroNormError(f"{role} {index} ('{ids[index]}') has a zero-norm feature vector")
    return feats / norms[:, np.newaxis]


def similarity_matrix(
    probe_feats: torch.Tensor | np.ndarray,
    gallery_feats: torch.Tensor | np.ndarray,
    probe_ids: list[str],
    gallery_ids: list[str],
) -> SimilarityMatrix:
    """Cosine similarity of every probe against every gallery vector.

    Raises:
        ZeroNormError: Naming the first zero-norm probe or gallery vector.
        IdentificationError: If feature dimensions or label counts disagree.
    """
    probes = _as_matrix(probe_feats)
    gallery = _as_matrix(gallery_feats)
    if probes.shape[0] != len(probe_ids) or gallery.shape[0] != len(gallery_ids):
        raise IdentificationError("feature rows and identity labels differ in count")
    if probes.shape[1] != gallery.shape[1]:
        raise IdentificationError(
            f"probe dim {probes.shape[1]} differs from gallery dim {gallery.shape[1]}"
        )

    unit_probes = _unit_rows(probes, probe_ids, "probe")
    unit_gallery = _unit_rows(gallery, gallery_ids, "gallery")
    values = unit_probes @ unit_gallery.T
    return SimilarityMatrix(
        values=np.clip(values, -1.0, 1.0),
        probe_ids=list(probe_ids),
        gallery_ids=list(gallery_ids),
    )


def match_ranks(sim: SimilarityMatrix) -> list[Optional[int]]:
    """1-based rank of the first same-identity gallery entry, per probe.

    ``None`` marks probes whose identity is absent from the gallery.
    """
    gallery = np.asarray(sim.gallery_ids, dtype=object)
    ranks: list[Optional[int]] = []
    for row, probe_id in zip(sim.values, sim.probe_ids):
        order = np.argsort(-row, kind="stable")
        hits = np.flatnonzero(gallery[order] == probe_id)
        ranks.append(int(hits[0]) + 1 if hits.size else None)
    return ranks


def cmc(sim: SimilarityMatrix, ks: tuple[int, ...] | list[int] = DEFAULT_RANKS) -> CmcCurve:
    """Cumulative match characteristic at the requested ranks.

    Ranks beyond the gallery size count as the whole gallery. Probes whose
    identity is not enrolled are excluded and counted.

    Raises:
        IdentificationError: Empty matrix, no valid probe, or a rank below 1.
    """
    n_probe, n_gallery = sim.shape
    if n_probe == 0 or n_gallery == 0:
        raise IdentificationError("similarity matrix is empty")
    ranks = sorted({int(k) for k in ks})
    if not ranks or ranks[0] < 1:
        raise IdentificationError("ranks must be positive integers")

    matched = match_ranks(sim)
    valid = [r for r in matched if r is not None]
    excluded = len(matched) - len(valid)
    if not valid:
        raise IdentificationError("no probe identity is present in the gallery")
    if excluded:
        logger.info(f"Excluded {excluded} of {n_probe} probes with no gallery identity")

    positions = np.asarray(valid)
    accuracies = [float(np.count_nonzero(positions <= k)) / len(valid) for k in ranks]
    return CmcCurve(
        ranks=ranks,
        accuracies=accuracies,
        n_probe=n_probe,
        n_gallery=n_gallery,
        excluded_probes=excluded,
    )


def _embed_all(psi: EmbeddingNetwork, images: list[torch.Tensor], batch_size: int) -> torch.Tensor:
    chunks = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunks.append(psi(torch.stack(images[start : start + batch_size]).float()))
    return torch.cat(chunks)


def identify(
    generator: Optional[Reconstructor],
    psi: EmbeddingNetwork,
    probe_pairs: list[PairedSample],
    gallery_faces: list[tuple[torch.Tensor, str]],
    ks: tuple[int, ...] | list[int] = DEFAULT_RANKS,
    probe_source: ProbeSource = ProbeSource.RECONSTRUCTED,
    batch_size: int = 8,
) -> tuple[CmcCurve, SimilarityMatrix]:
    """Identify reconstructed (or real) probe faces against a real-face gallery.

    Args:
        generator: Ear-to-face reconstructor, run in eval mode; may be None
            for real probes.
        psi: Embedding network.
        probe_pairs: Pairs whose ears give the probes.
        gallery_faces: ``(face in [-1, 1], subject_id)`` enrolment list.
        ks: Ranks to report.
        probe_source: Reconstructed faces, or the real faces as a baseline.
        batch_size: Images per forward pass.

    Returns:
        The CMC curve and the similarity matrix it was computed from.
    """
    if not probe_pairs:
        raise IdentificationError("probe set is empty")
    if not gallery_faces:
        raise IdentificationError("gallery is empty")

    if probe_source is ProbeSource.REAL:
        probes = [network_range(p.face, p.value_range) for p in probe_pairs]
    else:
        if generator is None:
            raise IdentificationError("reconstructed probes need a generator")
        probes = [to_signed(f) for f in reconstruct(generator, probe_pairs, batch_size)]

    probe_feats = _embed_all(psi, probes, batch_size)
    gallery_feats = _embed_all(psi, [face for face, _ in gallery_faces], batch_size)
    sim = similarity_matrix(
        probe_feats,
        gallery_feats,
        [p.subject_id for p in probe_pairs],
        [subject for _, subject in gallery_faces],
    )
    curve = cmc(sim, ks)
    curve.labels["probes"] = probe_source.value
    summary = " | ".join(f"rank-{k} {a:.3f}" for k, a in zip(curve.ranks, curve.accuracies))
    logger.info(
        f"Identification ({probe_source.value}) | probes {curve.n_probe} | "
        f"gallery {curve.n_gallery} | {summary}"
    )
    return curve, sim


def gallery_from_pairs(pairs: list[PairedSample]) -> list[tuple[torch.Tensor, str]]:
    """Real faces of ``pairs`` as an enrolment list in [-1, 1]."""
    return [(network_range(p.face, p.value_range), p.subject_id) for p in pairs]

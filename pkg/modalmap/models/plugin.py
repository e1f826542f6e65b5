"""Pluggable embedder loading (builtin seeded network or external weights)."""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from modalmap.errors import CheckpointError, EmbedderLoadError
from modalmap.models.checkpoint import load_archive, load_module_tensors, save_archive
from modalmap.models.embedding import EmbeddingConfig, EmbeddingNetwork
from modalmap.utils.logging import get_logger

logger = get_logger("modalmap.embedder")

EMBEDDER_KIND = "embedder"


class EmbedderKind(Enum):
    """Where embedder weights come from."""

    BUILTIN = "builtin"
    EXTERNAL = "external"


@dataclass(frozen=True)
class EmbedderSpec:
    """Which embedding network to use for perceptual losses and identification."""

    kind: EmbedderKind = EmbedderKind.BUILTIN
    embedding_dim: int = 128
    seed: int = 7
    weight_path: Optional[Path] = None
    input_size: Optional[int] = None

    def __post_init__(self) -> None:
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")
        if self.kind is EmbedderKind.EXTERNAL and self.weight_path is None:
            raise ValueError("external embedder requires weight_path")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "embedding_dim": self.embedding_dim,
            "seed": self.seed,
            "weight_path": None if self.weight_path is None else str(self.weight_path),
            "input_size": self.input_size,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EmbedderSpec":
        weight_path = data.get("weight_path")
        input_size = data.get("input_size")
        return cls(
            kind=EmbedderKind(data.get("kind", "builtin")),
            embedding_dim=int(data.get("embedding_dim", 128)),
            seed=int(data.get("seed", 7)),
            weight_path=None if weight_path is None else Path(weight_path),
            input_size=None if input_size is None else int(input_size),
        )


def load_embedder(spec: EmbedderSpec) -> EmbeddingNetwork:
    """Build or load the embedding network described by ``spec``.

    Builtin embedders are seeded and deterministic. External embedders are
    read from a named-tensor archive (kind ``embedder``) whose config echo
    describes the architecture.

    Raises:
        EmbedderLoadError: Missing or corrupt file, or dimension mismatch.
    """
    if spec.kind is EmbedderKind.BUILTIN:
        config = EmbeddingConfig(
            embedding_dim=spec.embedding_dim, seed=spec.seed, input_size=spec.input_size
        )
        logger.debug(f"Builtin embedder | dim {spec.embedding_dim} | seed {spec.seed}")
        return EmbeddingNetwork(config)

    assert spec.weight_path is not None
    try:
        payload = load_archive(spec.weight_path, kind=EMBEDDER_KIND)
    except CheckpointError as e:
        raise EmbedderLoadError(str(e)) from e

    try:
        config = EmbeddingConfig.from_dict(payload["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise EmbedderLoadError(f"{spec.weight_path} has an unusable config: {e}") from e
    if config.embedding_dim != spec.embedding_dim:
        raise EmbedderLoadError(
            f"dimension mismatch: {spec.weight_path} holds a {config.embedding_dim}-d "
            f"embedder, spec expects {spec.embedding_dim}"
        )
    if spec.input_size is not None:
        config = EmbeddingConfig(
            embedding_dim=config.embedding_dim,
            widths=config.widths,
            in_channels=config.in_channels,
            seed=config.seed,
            input_size=spec.input_size,
        )

    network = EmbeddingNetwork(config)
    try:
        load_module_tensors(network, payload["tensors"].get("embedder", {}), "embedder")
    except CheckpointError as e:
        raise EmbedderLoadError(str(e)) from e
    network.requires_grad_(False)
    logger.info(f"Loaded external embedder from {spec.weight_path} (dim {config.embedding_dim})")
    return network


def export_embedder(network: EmbeddingNetwork, path: Path) -> Path:
    """Write an embedder as an archive ``load_embedder`` accepts."""
    return save_archive(
        path,
        kind=EMBEDDER_KIND,
        config=network.config.to_dict(),
        tensors={"embedder": dict(network.state_dict())},
    )

"""Exception hierarchy for modalmap."""

from typing import Optional


class ModalMapError(Exception):
    """Base class for all modalmap errors."""


class ConfigError(ModalMapError):
    """Invalid or unreadable experiment configuration."""


class ManifestError(ModalMapError):
    """Manifest file is missing or violates an invariant."""

    def __init__(self, message: str, row: Optional[int] = None) -> None:
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SplitError(ModalMapError):
    """Split specification cannot be satisfied by the manifest."""


class ImageLoadError(ModalMapError):
    """Image file could not be decoded or is empty."""


class SynthesisError(ModalMapError):
    """Synthetic dataset could not be generated."""


class ShapeError(ModalMapError):
    """Tensor shapes violate a network or loss contract."""


class CheckpointError(ModalMapError):
    """Checkpoint archive is missing, corrupt or disagrees with its config."""


class EmbedderLoadError(CheckpointError):
    """External embedder weights could not be loaded."""


class NonFiniteLossError(ModalMapError):
    """A loss component became NaN or infinite during training."""

    def __init__(self, component: str, step: int, value: float) -> None:
        self.component = component
        self.step = step
        self.value = value
        super().__init__(f"Non-finite {component} loss ({value}) at step {step}")


class MetricError(ModalMapError):
    """Metric inputs are invalid."""


class IdentificationError(ModalMapError):
    """Identification inputs are invalid."""


class ZeroNormError(IdentificationError):
    """A feature vector has zero norm and no defined cosine similarity."""


class RunLockedError(ModalMapError):
    """Another command holds the run directory lock."""

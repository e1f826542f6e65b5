"""Named-tensor checkpoint archives.

An archive is a single ``torch.save`` file holding::

    {
        "version": 1,
        "kind": "train_state" | "embedder" | ...,
        "config": {...},             # config echo, plain python values
        "tensors": {group: {name: tensor}},
        "extra": {...},              # optimizer state, step counter, RNG state
    }

Loading checks the version and that every tensor group agrees in names and
shapes with a module built from the echoed config.
"""

from pathlib import Path
from typing import Any, Optional

import torch
import torch.nn as nn

from modalmap.errors import CheckpointError
from modalmap.utils.logging import get_logger

logger = get_logger("modalmap.checkpoint")

CHECKPOINT_VERSION = 1


def save_archive(
    path: Path,
    kind: str,
    config: dict[str, Any],
    tensors: dict[str, dict[str, torch.Tensor]],
    extra: Optional[dict[str, Any]] = None,
) -> Path:
    """Write an archive atomically (temp file then rename).

    Raises:
        CheckpointError: If the file cannot be written.
    """
    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "tensors": {
            group: {name: t.detach().cpu().clone() for name, t in named.items()}
            for group, named in tensors.items()
        },
        "extra": extra or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        torch.save(payload, tmp)
        tmp.replace(path)
    except OSError as e:
        tmp.unlink(missing_ok=True)
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.debug(f"Wrote {kind} archive {path}")
    return path


def load_archive(path: Path, kind: Optional[str] = None) -> dict[str, Any]:
    """Read and sanity-check an archive.

    Args:
        path: Archive file.
        kind: Expected ``kind`` field, if any.

    Raises:
        CheckpointError: Missing, unreadable, wrong version or wrong kind.
    """
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:  # torch raises several unrelated types on corrupt files
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or "tensors" not in payload:
        raise CheckpointError(f"{path} is not a modalmap archive")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has version {payload.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    if kind is not None and payload.get("kind") != kind:
        raise CheckpointError(f"{path} holds a '{payload.get('kind')}' archive, not '{kind}'")
    return payload


def load_module_tensors(module: nn.Module, tensors: dict[str, torch.Tensor], label: str) -> None:
    """Copy named tensors into ``module`` after checking names and shapes.

    Raises:
        CheckpointError: Listing every missing, unexpected or mis-shaped tensor.
    """
    expected = module.state_dict()
    problems: list[str] = []
    for name in sorted(set(expected) - set(tensors)):
        problems.append(f"missing {name}")
    for name in sorted(set(tensors) - set(expected)):
        problems.append(f"unexpected {name}")
    for name in sorted(set(expected) & set(tensors)):
        if tuple(expected[name].shape) != tuple(tensors[name].shape):
            problems.append(
                f"{name}: file {tuple(tensors[name].shape)} vs config {tuple(expected[name].shape)}"
            )
    if problems:
        raise CheckpointError(f"{label} tensors disagree with config: " + "; ".join(problems))
    module.load_state_dict(tensors)

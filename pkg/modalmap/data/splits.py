"""Train / subject-dependent / subject-independent split construction."""

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np

from modalmap.data.manifest import DatasetManifest
from modalmap.errors import SplitError
from modalmap.utils.logging import get_logger

logger = get_logger("modalmap.data")

SPLIT_NAMES = ("train", "sd_test_1", "sd_test_2", "sid_test")


class SidPolicy(Enum):
    """How subject-independent subjects are picked."""

    RANDOM = "random"
    SINGLE_PAIR_FIRST = "single_pair_first"  # prefer subjects owning one pair


class SdMode(Enum):
    """How a training subject's pairs are divided between train and sd_test_1."""

    FRACTION = "fraction"  # floor(train_fraction * n) to train
    ONE_PER_SUBJECT = "one_per_subject"  # exactly one pair to sd_test_1


@dataclass(frozen=True)
class SplitSpec:
    """Parameters of the split protocol."""

    sid_subject_count: int = 10
    sd2_subject_count: Optional[int] = None
    train_fraction: float = 0.8
    seed: int = 0
    sid_policy: SidPolicy = SidPolicy.RANDOM
    sd_mode: SdMode = SdMode.FRACTION

    def __post_init__(self) -> None:
        if self.sid_subject_count < 0:
            raise ValueError("sid_subject_count must be non-negative")
        if self.sd2_subject_count is not None and self.sd2_subject_count < 0:
            raise ValueError("sd2_subject_count must be non-negative")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in [0, 1]")
        if (
            self.sd2_subject_count
            and self.sid_subject_count
            and self.sd2_subject_count != self.sid_subject_count
        ):
            raise ValueError("sd2_subject_count must equal sid_subject_count when both are set")

    @property
    def sd2_count(self) -> int:
        """Number of subjects drawn into sd_test_2."""
        if self.sd2_subject_count is None:
            return self.sid_subject_count
        return self.sd2_subject_count

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["sid_policy"] = self.sid_policy.value
        data["sd_mode"] = self.sd_mode.value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SplitSpec":
        return cls(
            sid_subject_count=int(data.get("sid_subject_count", 10)),
            sd2_subject_count=(
                None if data.get("sd2_subject_count") is None else int(data["sd2_subject_count"])
            ),
            train_fraction=float(data.get("train_fraction", 0.8)),
            seed=int(data.get("seed", 0)),
            sid_policy=SidPolicy(data.get("sid_policy", "random")),
            sd_mode=SdMode(data.get("sd_mode", "fraction")),
        )


@dataclass
class SplitAssignment:
    """Pair ids per split plus the spec that produced them."""

    spec: SplitSpec
    train: set[str] = field(default_factory=set)
    sd_test_1: set[str] = field(default_factory=set)
    sd_test_2: set[str] = field(default_factory=set)
    sid_test: set[str] = field(default_factory=set)

    def get(self, name: str) -> set[str]:
        """Pair ids of a split by name."""
        if name not in SPLIT_NAMES:
            raise SplitError(f"unknown split '{name}' (expected one of {', '.join(SPLIT_NAMES)})")
        result: set[str] = getattr(self, name)
        return result

    def subjects(self, manifest: DatasetManifest, name: str) -> set[str]:
        """Subjects appearing in a split."""
        ids = self.get(name)
        return {e.subject_id for e in manifest.entries if e.pair_id in ids}

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"spec": self.spec.to_dict()}
        for name in SPLIT_NAMES:
            data[name] = sorted(self.get(name))
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SplitAssignment":
        return cls(
            spec=SplitSpec.from_dict(data["spec"]),
            **{name: set(data.get(name, [])) for name in SPLIT_NAMES},
        )


def build_splits(manifest: DatasetManifest, spec: SplitSpec) -> SplitAssignment:
    """Partition a manifest into train and the three test sets.

    Subject-independent subjects are drawn first from a seeded permutation.
    Every remaining subject's pairs (sorted by pair id, then shuffled with the
    same seeded generator) are divided between train and sd_test_1 according
    to ``spec.sd_mode``. Single-pair subjects always go to train. sd_test_2 is
    a seeded subject sample of sd_test_1 holding all of those subjects' pairs.

    Args:
        manifest: Source manifest.
        spec: Split protocol parameters.

    Returns:
        Split assignment; a pure function of (manifest, spec).

    Raises:
        SplitError: If there are too few subjects for the requested test sets.
    """
    groups = manifest.by_subject()
    subjects = list(groups)
    needed = spec.sid_subject_count + spec.sd2_count
    if len(subjects) < needed:
        raise SplitError(
            f"manifest has {len(subjects)} subjects, split needs at least {needed}"
        )

    rng = np.random.default_rng(spec.seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    if spec.sid_policy is SidPolicy.SINGLE_PAIR_FIRST:
        order = sorted(order, key=lambda s: len(groups[s]) != 1)
    sid_subjects = set(order[: spec.sid_subject_count])

    assignment = SplitAssignment(spec=spec)
    for subject in subjects:
        pair_ids = [e.pair_id for e in groups[subject]]
        if subject in sid_subjects:
            assignment.sid_test.update(pair_ids)
            continue

        shuffled = [pair_ids[i] for i in rng.permutation(len(pair_ids))]
        n = len(shuffled)
        if n == 1:
            logger.debug(f"Subject {subject} has a single pair; assigned to train only")
            n_train = 1
        elif spec.sd_mode is SdMode.ONE_PER_SUBJECT:
            n_train = n - 1
        else:
            n_train = max(1, math.floor(spec.train_fraction * n))
        assignment.train.update(shuffled[:n_train])
        assignment.sd_test_1.update(shuffled[n_train:])

    sd1_subjects = sorted(assignment.subjects(manifest, "sd_test_1"))
    if spec.sd2_count > len(sd1_subjects):
        raise SplitError(
            f"sd_test_2 needs {spec.sd2_count} subjects, sd_test_1 has {len(sd1_subjects)}"
        )
    picks = rng.permutation(len(sd1_subjects))[: spec.sd2_count]
    sd2_subjects = {sd1_subjects[i] for i in picks}
    assignment.sd_test_2 = {
        e.pair_id
        for e in manifest.entries
        if e.subject_id in sd2_subjects and e.pair_id in assignment.sd_test_1
    }

    logger.info(
        f"Splits built | train: {len(assignment.train)} | sd_test_1: {len(assignment.sd_test_1)}"
        f" | sd_test_2: {len(assignment.sd_test_2)} | sid_test: {len(assignment.sid_test)}"
    )
    return assignment


def save_splits(assignment: SplitAssignment, path: Path) -> Path:
    """Write a split assignment as JSON (sorted pair id arrays plus the spec)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(assignment.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_splits(path: Path) -> SplitAssignment:
    """Read a split assignment written by ``save_splits``."""
    if not path.exists():
        raise SplitError(f"split file not found: {path}")
    with open(path, encoding="utf-8") as f:
        return SplitAssignment.from_dict(json.load(f))

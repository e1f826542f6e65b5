"""Paired ear/face dataset manifests.

A manifest is a UTF-8 CSV with header ``pair_id,subject_id,ear_path,face_path``.
Image paths are stored relative to the directory holding the manifest.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import pandas as pd

from modalmap.errors import ManifestError

MANIFEST_COLUMNS = ["pair_id", "subject_id", "ear_path", "face_path"]


@dataclass(frozen=True)
class ManifestEntry:
    """One ear/face image pair of a subject."""

    pair_id: str
    subject_id: str
    ear_path: str
    face_path: str

    def to_dict(self) -> dict[str, str]:
        """Convert entry to a CSV row."""
        return {
            "pair_id": self.pair_id,
            "subject_id": self.subject_id,
            "ear_path": self.ear_path,
            "face_path": self.face_path,
        }


@dataclass
class DatasetManifest:
    """All pairs of a dataset, rooted at the manifest directory."""

    dataset_name: str
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Validate manifest invariants."""
        seen_ids: set[str] = set()
        seen_paths: set[tuple[str, str]] = set()
        for row, entry in enumerate(self.entries, start=2):
            if not entry.subject_id:
                raise ManifestError("empty subject_id", row)
            if not entry.pair_id:
                raise ManifestError("empty pair_id", row)
            if not entry.ear_path or not entry.face_path:
                raise ManifestError(f"pair {entry.pair_id} is missing an image path", row)
            if entry.pair_id in seen_ids:
                raise ManifestError(f"duplicate pair_id '{entry.pair_id}'", row)
            paths = (entry.ear_path, entry.face_path)
            if paths in seen_paths:
                raise ManifestError(
                    f"duplicate image pair ({entry.ear_path}, {entry.face_path})", row
                )
            seen_ids.add(entry.pair_id)
            seen_paths.add(paths)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def subjects(self) -> list[str]:
        """Distinct subject ids in sorted order."""
        return sorted({e.subject_id for e in self.entries})

    def by_pair_id(self) -> dict[str, ManifestEntry]:
        """Index entries by pair id."""
        return {e.pair_id: e for e in self.entries}

    def by_subject(self) -> dict[str, list[ManifestEntry]]:
        """Group entries by subject, each group sorted by pair id."""
        groups: dict[str, list[ManifestEntry]] = {}
        for entry in self.entries:
            groups.setdefault(entry.subject_id, []).append(entry)
        return {s: sorted(g, key=lambda e: e.pair_id) for s, g in sorted(groups.items())}

    def resolve(self, relative: str) -> Path:
        """Absolute location of a manifest-relative image path."""
        return self.root / relative

    def select(self, pair_ids: set[str]) -> list[ManifestEntry]:
        """Entries whose pair id is in ``pair_ids``, in manifest order."""
        return [e for e in self.entries if e.pair_id in pair_ids]


def load_manifest(path: Path, dataset_name: Optional[str] = None) -> DatasetManifest:
    """Load and validate a manifest CSV.

    Args:
        path: Manifest file.
        dataset_name: Name to attach; defaults to the manifest directory name.

    Returns:
        Validated manifest rooted at ``path.parent``.

    Raises:
        ManifestError: If the file is missing, malformed, or violates an invariant.
    """
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as e:
        raise ManifestError(f"cannot parse {path}: {e}") from e

    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"{path} is missing columns: {', '.join(missing)}", row=1)

    entries: list[ManifestEntry] = []
    for idx, record in enumerate(frame[MANIFEST_COLUMNS].itertuples(index=False), start=2):
        values = [str(v).strip() for v in record]
        if any(not v for v in values):
            raise ManifestError(f"malformed row {values}", idx)
        pair_id, subject_id, ear_path, face_path = values
        entries.append(
            ManifestEntry(
                pair_id=pair_id, subject_id=subject_id, ear_path=ear_path, face_path=face_path
            )
        )

    return DatasetManifest(
        dataset_name=dataset_name or path.parent.name,
        root=path.parent,
        entries=entries,
    )


def save_manifest(manifest: DatasetManifest, path: Optional[Path] = None) -> Path:
    """Write a manifest CSV.

    Args:
        manifest: Manifest to write.
        path: Destination; defaults to ``<root>/manifest.csv``.

    Returns:
        Path written.
    """
    path = path or manifest.root / "manifest.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([e.to_dict() for e in manifest.entries], columns=MANIFEST_COLUMNS)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path

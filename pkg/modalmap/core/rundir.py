"""Run directory bookkeeping: single-command lock and produced-artifact index."""

import json
import os
from datetime import datetime, timezone
from pathlib import Path
from types import TracebackType
from typing import Any, Optional

from modalmap.errors import RunLockedError
from modalmap.utils.logging import get_logger

LOCK_NAME = ".modalmap.lock"
ARTIFACTS_NAME = "artifacts.json"


class RunDirectory:
    """An experiment output directory.

    Used as a context manager around one command: entering takes the lock
    file and exiting releases it. Produced files are indexed in
    ``artifacts.json`` through ``record``.
    """

    def __init__(self, root: Path, command: str = "") -> None:
        """Initialize run directory.

        Args:
            root: Output directory; created if missing.
            command: Name of the command holding the lock.
        """
        self.root = root
        self.command = command
        self.logger = get_logger("modalmap.run")
        self._held = False

    @property
    def lock_path(self) -> Path:
        return self.root / LOCK_NAME

    @property
    def artifacts_path(self) -> Path:
        return self.root / ARTIFACTS_NAME

    def acquire(self) -> None:
        """Create the lock file.

        Raises:
            RunLockedError: If another command holds the lock.
        """
        self.root.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = self.lock_path.read_text(encoding="utf-8").strip() or "unknown"
            raise RunLockedError(
                f"{self.root} is locked by {holder}; remove {self.lock_path} if stale"
            ) from None
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(f"{self.command} pid={os.getpid()}\n")
        self._held = True

    def release(self) -> None:
        if self._held:
            self.lock_path.unlink(missing_ok=True)
            self._held = False

    def __enter__(self) -> "RunDirectory":
        self.acquire()
        return self

    def __exit__(
        self,
        exc_type: Optional[type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        self.release()

    def artifacts(self) -> dict[str, Any]:
        """Current artifact index (empty when none has been written)."""
        if not self.artifacts_path.exists():
            return {"files": {}}
        with open(self.artifacts_path, encoding="utf-8") as f:
            data: dict[str, Any] = json.load(f)
        data.setdefault("files", {})
        return data

    def record(self, *paths: Path) -> None:
        """Add produced files to ``artifacts.json``, keyed by run-relative path."""
        data = self.artifacts()
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        for path in paths:
            try:
                key = path.resolve().relative_to(self.root.resolve()).as_posix()
            except ValueError:
                key = str(path)
            data["files"][key] = {"command": self.command, "written": stamp}
        data["files"] = dict(sorted(data["files"].items()))
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.artifacts_path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)
            f.write("\n")
        self.logger.debug(f"Recorded {len(paths)} artifacts for {self.command}")

    def listing(self) -> list[tuple[str, int]]:
        """Files under the run directory with their sizes, bookkeeping files excluded."""
        if not self.root.exists():
            return []
        rows = []
        for path in sorted(self.root.rglob("*")):
            if path.is_file() and path.name not in (LOCK_NAME, ARTIFACTS_NAME):
                rows.append((path.relative_to(self.root).as_posix(), path.stat().st_size))
        return rows

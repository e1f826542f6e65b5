"""Tests for run directory bookkeeping."""

from pathlib import Path

import pytest

from modalmap.core.rundir import ARTIFACTS_NAME, LOCK_NAME, RunDirectory
from modalmap.errors import RunLockedError


def test_lock_is_exclusive(tmp_path: Path) -> None:
    """Test a second command cannot enter a locked run directory."""
    with RunDirectory(tmp_path, "train"):
        assert (tmp_path / LOCK_NAME).exists()
        with pytest.raises(RunLockedError, match="locked by train"):
            RunDirectory(tmp_path, "evaluate").acquire()
    assert not (tmp_path / LOCK_NAME).exists()


def test_lock_released_on_error(tmp_path: Path) -> None:
    """Test the lock is released when the command fails."""
    with pytest.raises(RuntimeError):
        with RunDirectory(tmp_path, "train"):
            raise RuntimeError("boom")
    RunDirectory(tmp_path, "evaluate").acquire()


def test_release_without_lock_keeps_other_holder(tmp_path: Path) -> None:
    """Test releasing an unheld lock does not delete someone else's."""
    holder = RunDirectory(tmp_path, "train")
    holder.acquire()
    RunDirectory(tmp_path, "status").release()
    assert (tmp_path / LOCK_NAME).exists()
    holder.release()


def test_record_artifacts(tmp_path: Path) -> None:
    """Test artifacts are keyed by run-relative path and accumulate across commands."""
    (tmp_path / "reports").mkdir()
    report = tmp_path / "reports" / "sid_test_metrics.json"
    report.write_text("{}", encoding="utf-8")
    splits = tmp_path / "splits.json"
    splits.write_text("{}", encoding="utf-8")

    RunDirectory(tmp_path, "evaluate").record(report)
    RunDirectory(tmp_path, "prepare").record(splits)

    files = RunDirectory(tmp_path).artifacts()["files"]
    assert list(files) == ["reports/sid_test_metrics.json", "splits.json"]
    assert files["splits.json"]["command"] == "prepare"
    assert files["reports/sid_test_metrics.json"]["command"] == "evaluate"


def test_listing_skips_bookkeeping(tmp_path: Path) -> None:
    """Test the listing shows produced files with sizes only."""
    run = RunDirectory(tmp_path, "prepare")
    (tmp_path / "splits.json").write_text("abc", encoding="utf-8")
    run.record(tmp_path / "splits.json")
    with run:
        assert run.listing() == [("splits.json", 3)]
    assert (tmp_path / ARTIFACTS_NAME).exists()
    assert RunDirectory(tmp_path / "missing").listing() == []

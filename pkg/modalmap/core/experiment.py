"""Experiment orchestration behind the CLI commands.

Run directory layout::

    <output_dir>/
        config.yaml              verbatim experiment YAML
        data/                    synthetic images + manifest.csv (synthetic datasets)
        splits.json
        checkpoints/step_NNNNNNN.pt
        train_log.jsonl
        reports/                 metrics JSON + CSV, CMC JSON, grids
        artifacts.json
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

from modalmap.core.rundir import RunDirectory
from modalmap.core.trainer import (
    TRAIN_STATE_KIND,
    Trainer,
    TrainResult,
    latest_checkpoint,
)
from modalmap.data.images import IngestConfig, PairedSample, load_pairs
from modalmap.data.manifest import DatasetManifest, load_manifest
from modalmap.data.splits import (
    SPLIT_NAMES,
    SplitAssignment,
    build_splits,
    load_splits,
    save_splits,
)
from modalmap.data.synthetic import generate_synthetic
from modalmap.errors import CheckpointError, ConfigError, ManifestError, MetricError
from modalmap.eval.grid import GridResult, write_grid
from modalmap.eval.identification import (
    CmcCurve,
    ProbeSource,
    gallery_from_pairs,
    identify,
)
from modalmap.eval.metrics import MetricsReport, evaluate_set
from modalmap.models.checkpoint import load_archive, load_module_tensors
from modalmap.models.embedding import EmbeddingNetwork
from modalmap.models.generator import GeneratorConfig, UNetGenerator
from modalmap.models.plugin import load_embedder
from modalmap.utils.config import ExperimentConfig
from modalmap.utils.logging import get_logger
from modalmap.utils.seeding import seed_everything

SPLITS_NAME = "splits.json"
REPORTS_DIR = "reports"
DEFAULT_EVAL_SPLITS = ("sd_test_1", "sd_test_2", "sid_test")

logger = get_logger("modalmap.experiment")


@dataclass
class LoadedModel:
    """Generator restored from a training checkpoint."""

    generator: UNetGenerator
    checkpoint: Path
    step: int
    image_size: int
    dataset_name: str


def load_generator(checkpoint: Path) -> LoadedModel:
    """Rebuild the generator stored in a train_state archive.

    Raises:
        CheckpointError: Missing, corrupt or inconsistent checkpoint.
    """
    payload = load_archive(checkpoint, kind=TRAIN_STATE_KIND)
    echo = payload.get("config", {})
    try:
        generator = UNetGenerator(GeneratorConfig.from_dict(echo["generator"]))
        image_size = int(echo["image_size"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{checkpoint} has an unusable config echo: {e}") from e
    try:
        tensors = payload["tensors"]["generator"]
        step = int(payload["extra"]["step"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{checkpoint} has an incomplete archive: {e!r}") from e
    load_module_tensors(generator, tensors, "generator")
    generator.eval()
    return LoadedModel(
        generator=generator,
        checkpoint=checkpoint,
        step=step,
        image_size=image_size,
        dataset_name=str(echo.get("dataset", "")),
    )


@dataclass
class PrepareResult:
    """Outputs of ``Experiment.prepare``."""

    manifest: DatasetManifest
    assignment: SplitAssignment
    manifest_path: Path
    splits_path: Path


class Experiment:
    """One experiment configuration bound to its run directory."""

    def __init__(self, config: ExperimentConfig, command: str = "") -> None:
        """Initialize experiment.

        Args:
            config: Resolved experiment configuration.
            command: Name of the invoking command, recorded in the run lock and artifacts.
        """
        self.config = config
        self.run = RunDirectory(config.output_dir, command)
        self.logger = logger

    @property
    def root(self) -> Path:
        return self.config.output_dir

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    @property
    def splits_path(self) -> Path:
        return self.root / SPLITS_NAME

    @property
    def reports_dir(self) -> Path:
        return self.root / REPORTS_DIR

    @property
    def manifest_path(self) -> Path:
        if self.config.dataset.is_synthetic:
            return self.data_dir / "manifest.csv"
        assert self.config.dataset.manifest is not None
        return self.config.dataset.manifest

    def _seed(self) -> None:
        seed_everything(self.config.seed, self.config.deterministic)

    def load_manifest(self) -> DatasetManifest:
        if self.config.dataset.is_synthetic and not self.manifest_path.exists():
            raise ConfigError(
                f"synthetic dataset not generated under {self.data_dir}; run 'prepare' first"
            )
        return load_manifest(self.manifest_path, self.config.dataset.name)

    def load_splits(self) -> SplitAssignment:
        if not self.splits_path.exists():
            raise ConfigError(f"no splits at {self.splits_path}; run 'prepare' first")
        return load_splits(self.splits_path)

    def load_split(
        self,
        name: str,
        ingest: Optional[IngestConfig] = None,
        manifest: Optional[DatasetManifest] = None,
        assignment: Optional[SplitAssignment] = None,
    ) -> list[PairedSample]:
        """Pairs of a named split, ingested with ``ingest`` (config default)."""
        if manifest is None:
            manifest = self.load_manifest()
        if assignment is None:
            assignment = self.load_splits()
        return load_pairs(manifest, assignment.get(name), ingest or self.config.ingest)

    def embedder(self) -> EmbeddingNetwork:
        return load_embedder(self.config.embedder)

    def model(self, checkpoint: Optional[Path] = None) -> LoadedModel:
        """Generator from ``checkpoint``, or the latest one in the run directory."""
        path = checkpoint or latest_checkpoint(self.root)
        if path is None:
            raise CheckpointError(
                f"no checkpoint in {self.root / 'checkpoints'}; run 'train' first"
            )
        return load_generator(path)

    def _model_ingest(
        self, model: LoadedModel, config: Optional[ExperimentConfig] = None
    ) -> IngestConfig:
        """Ingestion at the checkpoint's image size."""
        value_range = (config or self.config).ingest.value_range
        return IngestConfig(target_size=model.image_size, value_range=value_range)

    def prepare(self) -> PrepareResult:
        """Generate or validate the dataset, then build and save the splits."""
        dataset = self.config.dataset
        if dataset.synthetic is not None:
            written = generate_synthetic(dataset.synthetic, self.data_dir)
            manifest = replace(written, dataset_name=dataset.name)
        else:
            manifest = self.load_manifest()
            self._check_files(manifest)

        assignment = build_splits(manifest, self.config.split)
        save_splits(assignment, self.splits_path)
        echo = self.config.write_echo(self.root)
        self.run.record(echo, self.splits_path)
        if dataset.is_synthetic:
            self.run.record(self.manifest_path)
        self.logger.info(
            f"Prepared {manifest.dataset_name}: {len(manifest)} pairs, "
            f"{len(manifest.subjects)} subjects | splits: {self.splits_path}"
        )
        return PrepareResult(manifest, assignment, self.manifest_path, self.splits_path)

    @staticmethod
    def _check_files(manifest: DatasetManifest) -> None:
        for row, entry in enumerate(manifest.entries, start=2):
            for path in (entry.ear_path, entry.face_path):
                if not manifest.resolve(path).exists():
                    raise ManifestError(f"image file not found: {path}", row=row)

    def train(
        self,
        resume: Optional[Path] = None,
        max_steps: Optional[int] = None,
        handle_signals: bool = False,
    ) -> TrainResult:
        """Train on the training split; checkpoints and step log go to the run directory."""
        self._seed()
        cfg = self.config
        train_config = cfg.train if max_steps is None else replace(cfg.train, max_steps=max_steps)
        size = cfg.ingest.target_size
        cfg.generator.check_size(size, size)

        samples = self.load_split("train")
        echo = cfg.write_echo(self.root / "checkpoints")
        trainer = Trainer(
            train_config,
            cfg.generator,
            cfg.discriminator,
            self.embedder(),
            self.root,
            cfg.dataset.name,
        )
        result = trainer.run(samples, resume=resume, handle_signals=handle_signals)
        self.run.record(echo, result.log_path, *result.checkpoints)
        return result

    def _evaluate_named(
        self,
        model: LoadedModel,
        psi: EmbeddingNetwork,
        names: tuple[str, ...] | list[str],
        source: "Experiment",
        labels: dict[str, str],
    ) -> dict[str, MetricsReport]:
        """Evaluate splits of ``source``'s dataset; sd_test_2 filters sd_test_1's rows."""
        manifest = source.load_manifest()
        assignment = source.load_splits()
        ingest = self._model_ingest(model, source.config)
        computed: dict[str, MetricsReport] = {}

        def compute(name: str) -> Optional[MetricsReport]:
            if name not in computed:
                pairs = load_pairs(manifest, assignment.get(name), ingest)
                if not pairs:
                    return None
                self._seed()
                computed[name] = evaluate_set(
                    model.generator, psi, pairs, self.config.ssim, split=name, **labels
                )
            return computed[name]

        reports: dict[str, MetricsReport] = {}
        for name in names:
            if name not in SPLIT_NAMES:
                raise ConfigError(f"unknown split '{name}'")
            if name == "sd_test_2":
                base = compute("sd_test_1")
                if base is None or not assignment.sd_test_2:
                    self.logger.warning("Split sd_test_2 is empty, skipped")
                    continue
                reports[name] = base.filtered(assignment.sd_test_2, split="sd_test_2")
                continue
            report = compute(name)
            if report is None:
                self.logger.warning(f"Split {name} is empty, skipped")
                continue
            reports[name] = report
        if not reports:
            raise MetricError("every requested split is empty")
        return reports

    def _save_reports(self, reports: dict[str, MetricsReport], prefix: str = "") -> None:
        for name, report in reports.items():
            json_path, csv_path = report.save(self.reports_dir / f"{prefix}{name}_metrics.json")
            self.run.record(json_path, csv_path)

    def evaluate(
        self,
        checkpoint: Optional[Path] = None,
        splits: tuple[str, ...] | list[str] = DEFAULT_EVAL_SPLITS,
    ) -> dict[str, MetricsReport]:
        """Reconstruction metrics on the named splits of this experiment's dataset."""
        model = self.model(checkpoint)
        labels = {
            "model": model.dataset_name or self.config.dataset.name,
            "data": self.config.dataset.name,
            "checkpoint": model.checkpoint.name,
        }
        reports = self._evaluate_named(model, self.embedder(), splits, self, labels)
        self._save_reports(reports)
        return reports

    def cross_eval(
        self,
        data_config: ExperimentConfig,
        checkpoint: Optional[Path] = None,
        splits: tuple[str, ...] | list[str] = DEFAULT_EVAL_SPLITS,
    ) -> dict[str, MetricsReport]:
        """Evaluate this experiment's model on the splits of another (prepared) dataset.

        The embedder and metric settings come from this experiment; only the
        dataset, ingestion value range and splits come from ``data_config``.
        """
        source = Experiment(data_config)
        model = self.model(checkpoint)
        labels = {
            "model": model.dataset_name or self.config.dataset.name,
            "data": data_config.dataset.name,
            "checkpoint": model.checkpoint.name,
        }
        reports = self._evaluate_named(model, self.embedder(), splits, source, labels)
        self._save_reports(reports, prefix=f"cross_{data_config.dataset.name}_")
        return reports

    def identify(
        self,
        checkpoint: Optional[Path] = None,
        split: str = "sid_test",
        gallery: Optional[str] = None,
        ks: Optional[tuple[int, ...] | list[int]] = None,
        probes: Optional[ProbeSource] = None,
        dump_matrix: bool = False,
    ) -> CmcCurve:
        """CMC identification of a split's probes against a real-face gallery.

        Args:
            checkpoint: Generator checkpoint (latest when omitted); unused for real probes.
            split: Split whose pairs give the probes.
            gallery: Split whose real faces are enrolled; defaults to ``split``.
            ks: Ranks to report.
            probes: Reconstructed or real probe faces.
            dump_matrix: Also write the similarity matrix as CSV.
        """
        ident = self.config.identification
        probes = probes or ident.probes
        gallery = gallery or split
        for name in (split, gallery):
            if name not in SPLIT_NAMES:
                raise ConfigError(f"unknown split '{name}'")

        manifest = self.load_manifest()
        assignment = self.load_splits()
        model: Optional[LoadedModel] = None
        ingest = self.config.ingest
        if probes is ProbeSource.RECONSTRUCTED:
            model = self.model(checkpoint)
            ingest = self._model_ingest(model)

        probe_pairs = self.load_split(split, ingest, manifest, assignment)
        gallery_pairs = (
            probe_pairs
            if gallery == split
            else self.load_split(gallery, ingest, manifest, assignment)
        )
        self._seed()
        curve, sim = identify(
            model.generator if model else None,
            self.embedder(),
            probe_pairs,
            gallery_from_pairs(gallery_pairs),
            ks or ident.ranks,
            probe_source=probes,
            batch_size=ident.batch_size,
        )
        curve.labels.update(
            {"split": split, "gallery": gallery, "data": self.config.dataset.name}
        )
        if model is not None:
            curve.labels["checkpoint"] = model.checkpoint.name

        stem = f"{split}_vs_{gallery}_{probes.value}"
        written = [curve.save(self.reports_dir / f"{stem}_cmc.json")]
        if dump_matrix:
            written.append(sim.save_csv(self.reports_dir / f"{stem}_similarity.csv"))
        self.run.record(*written)
        return curve

    def grid(
        self,
        checkpoint: Optional[Path] = None,
        split: str = "sid_test",
        count: int = 8,
        output: Optional[Path] = None,
        save_individual: bool = False,
    ) -> GridResult:
        """Triptych grid of the first ``count`` pairs (by pair id) of a split."""
        if count < 1:
            raise ValueError("count must be at least 1")
        model = self.model(checkpoint)
        pairs = self.load_split(split, self._model_ingest(model))[:count]
        if not pairs:
            raise ConfigError(f"split '{split}' is empty")
        self._seed()
        result = write_grid(
            model.generator,
            pairs,
            output or self.reports_dir / f"grid_{split}.png",
            save_individual=save_individual,
        )
        self.run.record(result.path, *result.individual)
        return result

    def status(self) -> dict[str, Any]:
        """Summary of the configuration and run directory contents."""
        summary: dict[str, Any] = {
            "config": str(self.config.source) if self.config.source else "-",
            "output_dir": str(self.root),
            "dataset": self.config.dataset.name,
            "seed": self.config.seed,
            "locked": self.run.lock_path.exists(),
        }
        if self.splits_path.exists():
            assignment = load_splits(self.splits_path)
            summary["splits"] = {name: len(assignment.get(name)) for name in SPLIT_NAMES}
        checkpoint = latest_checkpoint(self.root)
        summary["latest_checkpoint"] = str(checkpoint) if checkpoint else None
        summary["files"] = self.run.listing()
        return summary
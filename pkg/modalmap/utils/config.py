"""Experiment configuration for modalmap.

One YAML file describes an experiment. Values resolve with the precedence
CLI flag > environment (``.env`` honoured) > YAML > dataclass default.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import yaml
from dotenv import load_dotenv

from modalmap.core.trainer import TrainConfig
from modalmap.data.images import IngestConfig
from modalmap.data.splits import SplitSpec
from modalmap.data.synthetic import SynthConfig
from modalmap.errors import ConfigError
from modalmap.eval.identification import DEFAULT_RANKS, ProbeSource
from modalmap.eval.metrics import SsimConfig
from modalmap.models.discriminator import DiscriminatorConfig
from modalmap.models.generator import GeneratorConfig
from modalmap.models.plugin import EmbedderKind, EmbedderSpec

ENV_OUTPUT_DIR = "MODALMAP_OUTPUT_DIR"
ENV_DEVICE = "MODALMAP_DEVICE"
ENV_NUM_WORKERS = "MODALMAP_NUM_WORKERS"
ENV_LOG_LEVEL = "MODALMAP_LOG_LEVEL"

SECTIONS = (
    "dataset",
    "ingest",
    "split",
    "model",
    "train",
    "metrics",
    "identification",
    "embedder",
    "output_dir",
    "seed",
    "deterministic",
    "log_level",
)


@dataclass(frozen=True)
class DatasetSection:
    """Where the paired images come from: an external manifest or a synthetic block."""

    name: str
    manifest: Optional[Path] = None
    synthetic: Optional[SynthConfig] = None

    def __post_init__(self) -> None:
        if (self.manifest is None) == (self.synthetic is None):
            raise ConfigError("dataset needs exactly one of 'manifest' or 'synthetic'")

    @property
    def is_synthetic(self) -> bool:
        return self.synthetic is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "manifest": None if self.manifest is None else str(self.manifest),
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
        }


@dataclass(frozen=True)
class IdentificationConfig:
    """Defaults of the identification command."""

    ranks: tuple[int, ...] = DEFAULT_RANKS
    probes: ProbeSource = ProbeSource.RECONSTRUCTED
    batch_size: int = 8

    def __post_init__(self) -> None:
        if not self.ranks or min(self.ranks) < 1:
            raise ValueError("identification ranks must be positive")
        if self.batch_size < 1:
            raise ValueError("identification batch_size must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "ranks": list(self.ranks),
            "probes": self.probes.value,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "IdentificationConfig":
        return cls(
            ranks=tuple(int(k) for k in data.get("ranks", DEFAULT_RANKS)),
            probes=ProbeSource(data.get("probes", "reconstructed")),
            batch_size=int(data.get("batch_size", 8)),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment configuration."""

    dataset: DatasetSection
    ingest: IngestConfig = field(default_factory=IngestConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ssim: SsimConfig = field(default_factory=SsimConfig)
    identification: IdentificationConfig = field(default_factory=IdentificationConfig)
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    output_dir: Path = Path("runs/default")
    seed: int = 0
    deterministic: bool = False
    log_level: str = "INFO"
    source: Optional[Path] = None
    raw_text: str = ""

    def to_dict(self) -> dict[str, Any]:
        """Resolved values as plain python data (for display and echoes)."""
        return {
            "dataset": self.dataset.to_dict(),
            "ingest": self.ingest.to_dict(),
            "split": self.split.to_dict(),
            "model": {
                "generator": self.generator.to_dict(),
                "discriminator": self.discriminator.to_dict(),
            },
            "train": self.train.to_dict(),
            "metrics": {"ssim": self.ssim.to_dict()},
            "identification": self.identification.to_dict(),
            "embedder": self.embedder.to_dict(),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "deterministic": self.deterministic,
            "log_level": self.log_level,
        }

    def write_echo(self, directory: Path) -> Path:
        """Copy the YAML text verbatim to ``<directory>/config.yaml``."""
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "config.yaml"
        text = self.raw_text or yaml.safe_dump(self.to_dict(), sort_keys=False)
        path.write_text(text, encoding="utf-8")
        return path


def _section(data: dict[str, Any], name: str) -> dict[str, Any]:
    value = data.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return value


def _seeded(section: dict[str, Any], seed: int, force: bool) -> dict[str, Any]:
    """Section with the experiment seed filled in (or forced when given on the CLI)."""
    if force or "seed" not in section:
        return {**section, "seed": seed}
    return section


def _resolve(path: str, base: Path) -> Path:
    candidate = Path(path).expanduser()
    return candidate if candidate.is_absolute() else base / candidate


def _dataset(data: dict[str, Any], base: Path, seed: int, force_seed: bool) -> DatasetSection:
    section = _section(data, "dataset")
    if "synthetic" in section:
        synthetic = SynthConfig.from_dict(
            _seeded(section.get("synthetic") or {}, seed, force_seed)
        )
        name = str(section.get("name", f"synthetic-{synthetic.family}"))
        return DatasetSection(name=name, synthetic=synthetic)
    if "manifest" in section:
        manifest = _resolve(str(section["manifest"]), base)
        return DatasetSection(name=str(section.get("name", manifest.parent.name)),
                              manifest=manifest)
    raise ConfigError("dataset needs exactly one of 'manifest' or 'synthetic'")


def parse_config(
    data: dict[str, Any],
    base_dir: Path,
    seed: Optional[int] = None,
    output_dir: Optional[Path] = None,
) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed YAML tree.

    Args:
        data: Parsed YAML mapping.
        base_dir: Directory relative dataset paths resolve against.
        seed: CLI seed; forces every seeded component when given.
        output_dir: CLI output directory.

    Raises:
        ConfigError: Unknown sections or invalid values.
    """
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")

    force_seed = seed is not None
    run_seed = seed if seed is not None else int(data.get("seed", 0))

    out_env = os.getenv(ENV_OUTPUT_DIR)
    if output_dir is not None:
        out = output_dir
    elif out_env:
        out = Path(out_env)
    else:
        out = Path(str(data.get("output_dir", "runs/default")))

    model = _section(data, "model")
    train_data = dict(_seeded(_section(data, "train"), run_seed, force_seed))
    if os.getenv(ENV_DEVICE):
        train_data["device"] = os.environ[ENV_DEVICE]
    if os.getenv(ENV_NUM_WORKERS):
        train_data["num_workers"] = os.environ[ENV_NUM_WORKERS]

    embedder_data = dict(_seeded(_section(data, "embedder"), run_seed, force_seed))
    weight_path = embedder_data.get("weight_path")
    if weight_path is not None:
        embedder_data["weight_path"] = str(_resolve(str(weight_path), base_dir))

    try:
        config = ExperimentConfig(
            dataset=_dataset(data, base_dir, run_seed, force_seed),
            ingest=IngestConfig.from_dict(_section(data, "ingest")),
            split=SplitSpec.from_dict(_seeded(_section(data, "split"), run_seed, force_seed)),
            generator=GeneratorConfig.from_dict(_section(model, "generator")),
            discriminator=DiscriminatorConfig.from_dict(_section(model, "discriminator")),
            train=TrainConfig.from_dict(train_data),
            ssim=SsimConfig.from_dict(_section(_section(data, "metrics"), "ssim")),
            identification=IdentificationConfig.from_dict(_section(data, "identification")),
            embedder=EmbedderSpec.from_dict(embedder_data),
            output_dir=out,
            seed=run_seed,
            deterministic=bool(data.get("deterministic", False)),
            log_level=str(os.getenv(ENV_LOG_LEVEL) or data.get("log_level", "INFO")).upper(),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e

    if config.embedder.kind is EmbedderKind.EXTERNAL and config.embedder.weight_path is not None:
        if not config.embedder.weight_path.exists():
            raise ConfigError(f"embedder weights not found: {config.embedder.weight_path}")
    return config


def load_config(
    path: Path,
    seed: Optional[int] = None,
    output_dir: Optional[Path] = None,
    env_file: Optional[Path] = None,
) -> ExperimentConfig:
    """Load an experiment YAML file.

    Args:
        path: YAML experiment file.
        seed: CLI seed override.
        output_dir: CLI output directory override.
        env_file: dotenv file; defaults to ``.env`` in the working directory.

    Returns:
        The resolved configuration, carrying the verbatim YAML text.

    Raises:
        ConfigError: If the file is missing, unparsable or invalid.
    """
    load_dotenv(env_file or Path.cwd() / ".env")

    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")

    config = parse_config(data, path.parent, seed=seed, output_dir=output_dir)
    return replace(config, source=path, raw_text=text)

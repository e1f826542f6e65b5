"""Alternating discriminator/generator training of the composite objective."""

import json
import math
import signal
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import torch
from torch.utils.data import DataLoader

from modalmap.core.losses import (
    LossBreakdown,
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    composite_total,
    feature_loss,
    pixel_loss,
    style_loss,
)
from modalmap.data.images import PairedDataset, PairedSample
from modalmap.errors import CheckpointError, NonFiniteLossError
from modalmap.models.checkpoint import load_archive, load_module_tensors, save_archive
from modalmap.models.discriminator import DiscriminatorConfig, PatchDiscriminator
from modalmap.models.embedding import EmbeddingNetwork
from modalmap.models.generator import GeneratorConfig, UNetGenerator
from modalmap.utils.logging import (
    STEP_LOGGER,
    attach_step_log,
    detach_step_log,
    get_logger,
)
from modalmap.utils.seeding import restore_torch_rng_state, torch_rng_state

TRAIN_STATE_KIND = "train_state"
STEP_LOG_NAME = "train_log.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings."""

    epochs: int = 100
    batch_size: int = 4
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 500
    max_steps: Optional[int] = None
    device: str = "cpu"
    num_workers: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        # zero is accepted: a null update that still reports losses
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be at least 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "weights": self.weights.to_dict(),
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "max_steps": self.max_steps,
            "device": self.device,
            "num_workers": self.num_workers,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        max_steps = data.get("max_steps")
        return cls(
            epochs=int(data.get("epochs", 100)),
            batch_size=int(data.get("batch_size", 4)),
            learning_rate=float(data.get("learning_rate", 2e-4)),
            beta1=float(data.get("beta1", 0.5)),
            beta2=float(data.get("beta2", 0.999)),
            weights=LossWeights.from_dict(data.get("weights", {})),
            seed=int(data.get("seed", 0)),
            checkpoint_every=int(data.get("checkpoint_every", 500)),
            max_steps=None if max_steps is None else int(max_steps),
            device=str(data.get("device", "cpu")),
            num_workers=int(data.get("num_workers", 0)),
        )


@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""

    config: TrainConfig
    generator: UNetGenerator
    discriminator: PatchDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    step: int = 0

    @classmethod
    def create(
        cls,
        config: TrainConfig,
        generator_config: GeneratorConfig,
        discriminator_config: DiscriminatorConfig,
    ) -> "TrainState":
        """Fresh networks and optimizers, initialised from ``config.seed``."""
        torch.manual_seed(config.seed)
        generator = UNetGenerator(generator_config).to(config.device)
        discriminator = PatchDiscriminator(discriminator_config).to(config.device)
        betas = (config.beta1, config.beta2)
        return cls(
            config=config,
            generator=generator,
            discriminator=discriminator,
            opt_g=torch.optim.Adam(generator.parameters(), lr=config.learning_rate, betas=betas),
            opt_d=torch.optim.Adam(
                discriminator.parameters(), lr=config.learning_rate, betas=betas
            ),
        )

    def config_echo(self, image_size: int, dataset_name: str = "") -> dict[str, Any]:
        return {
            "dataset": dataset_name,
            "generator": self.generator.config.to_dict(),
            "discriminator": self.discriminator.config.to_dict(),
            "train": self.config.to_dict(),
            "image_size": image_size,
        }

    def save(self, path: Path, image_size: int, dataset_name: str = "") -> Path:
        """Write a train_state archive, including the global torch RNG."""
        return save_archive(
            path,
            kind=TRAIN_STATE_KIND,
            config=self.config_echo(image_size, dataset_name),
            tensors={
                "generator": dict(self.generator.state_dict()),
                "discriminator": dict(self.discriminator.state_dict()),
            },
            extra={
                "step": self.step,
                "opt_g": self.opt_g.state_dict(),
                "opt_d": self.opt_d.state_dict(),
                "torch_rng": torch_rng_state(),
            },
        )

    @classmethod
    def load(cls, path: Path, config: Optional[TrainConfig] = None) -> "TrainState":
        """Restore a train_state archive.

        Args:
            path: Archive written by ``save``.
            config: Training config to continue with; defaults to the echoed one.
        """
        payload = load_archive(path, kind=TRAIN_STATE_KIND)
        try:
            echo = payload["config"]
            state = cls.create(
                config or TrainConfig.from_dict(echo["train"]),
                GeneratorConfig.from_dict(echo["generator"]),
                DiscriminatorConfig.from_dict(echo["discriminator"]),
            )
            tensors = payload["tensors"]
            g_tensors, d_tensors = tensors["generator"], tensors["discriminator"]
            extra = payload["extra"]
            step, rng = int(extra["step"]), extra["torch_rng"]
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{path} has an incomplete archive: {e!r}") from e
        load_module_tensors(state.generator, g_tensors, "generator")
        load_module_tensors(state.discriminator, d_tensors, "discriminator")
        try:
            state.opt_g.load_state_dict(extra["opt_g"])
            state.opt_d.load_state_dict(extra["opt_d"])
        except (KeyError, ValueError) as e:
            raise CheckpointError(f"{path}: optimizer state does not match: {e}") from e
        state.step = step
        restore_torch_rng_state(rng)
        return state


def _finite(component: str, value: torch.Tensor, step: int) -> None:
    if not torch.isfinite(value).all():
        bad = value[~torch.isfinite(value)].flatten()[0].item()
        raise NonFiniteLossError(component, step, bad)


def train_step(
    state: TrainState, batch: dict[str, Any], psi: EmbeddingNetwork
) -> tuple[TrainState, LossBreakdown]:
    """One discriminator update followed by one generator update.

    The discriminator sees the generator output detached, so its update
    cannot touch generator parameters; the generator update steps only the
    generator optimizer. psi is used frozen.

    Raises:
        NonFiniteLossError: Naming the first component that is NaN/inf.
    """
    device = state.config.device
    ear = batch["ear"].to(device)
    face = batch["face"].to(device)
    generator, discriminator = state.generator, state.discriminator
    weights = state.config.weights
    step = state.step + 1

    generator.train()
    discriminator.train()
    fake = generator(ear)

    # discriminator
    discriminator.requires_grad_(True)
    state.opt_d.zero_grad(set_to_none=True)
    real_logits = discriminator(ear, face)
    fake_logits = discriminator(ear, fake.detach())
    _finite("discriminator_real_logits", real_logits, step)
    _finite("discriminator_fake_logits", fake_logits, step)
    loss_d = adversarial_loss_d(real_logits, fake_logits)
    _finite("adversarial_d", loss_d, step)
    loss_d.backward()
    state.opt_d.step()

    # generator
    discriminator.requires_grad_(False)
    state.opt_g.zero_grad(set_to_none=True)
    gen_logits = discriminator(ear, fake)
    _finite("generator_logits", gen_logits, step)
    adv_g = adversarial_loss_g(gen_logits)
    pix = pixel_loss(fake, face)
    fake_feat = psi(fake)
    with torch.no_grad():
        real_feat = psi(face)
    feat = feature_loss(fake_feat, real_feat)
    sty = style_loss(fake_feat, real_feat)
    for name, value in (("adversarial_g", adv_g), ("pixel", pix), ("feature", feat),
                        ("style", sty)):
        _finite(name, value, step)
    total = composite_total(adv_g, pix, feat, sty, weights)
    _finite("total_g", total, step)
    total.backward()
    state.opt_g.step()
    discriminator.requires_grad_(True)

    state.step = step
    breakdown = LossBreakdown(
        adversarial_g=adv_g.item(),
        pixel=pix.item(),
        feature=feat.item(),
        style=sty.item(),
        total_g=total.item(),
        adversarial_d=loss_d.item(),
    )
    return state, breakdown


def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    """Seeded permutation of sample indices for one epoch."""
    gen = torch.Generator().manual_seed(seed * 100_003 + epoch)
    return [int(i) for i in torch.randperm(n, generator=gen)]


def truncate_step_log(path: Path, last_step: int) -> None:
    """Drop step lines beyond ``last_step`` (lines written after the resumed checkpoint)."""
    if not path.exists():
        return
    kept: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip() and json.loads(line)["step"] <= last_step:
                kept.append(line)
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(kept)


def checkpoint_path(run_dir: Path, step: int) -> Path:
    return run_dir / "checkpoints" / f"step_{step:07d}.pt"


def latest_checkpoint(run_dir: Path) -> Optional[Path]:
    """Highest-step checkpoint in a run directory, if any."""
    candidates = sorted((run_dir / "checkpoints").glob("step_*.pt"))
    return candidates[-1] if candidates else None


@dataclass
class TrainResult:
    """Outcome of a training run."""

    final_step: int
    checkpoints: list[Path]
    log_path: Path
    interrupted: bool = False


class Trainer:
    """Runs the training loop over in-memory training pairs."""

    def __init__(
        self,
        config: TrainConfig,
        generator_config: GeneratorConfig,
        discriminator_config: DiscriminatorConfig,
        psi: EmbeddingNetwork,
        run_dir: Path,
        dataset_name: str = "",
    ) -> None:
        """Initialize trainer.

        Args:
            config: Optimisation settings.
            generator_config: Generator architecture.
            discriminator_config: Discriminator architecture.
            psi: Frozen embedding network for feature/style losses.
            run_dir: Directory receiving checkpoints and the step log.
            dataset_name: Name echoed into checkpoints (cross-dataset labels).
        """
        self.config = config
        self.generator_config = generator_config
        self.discriminator_config = discriminator_config
        self.psi = psi.to(config.device)
        self.run_dir = run_dir
        self.dataset_name = dataset_name
        self.logger = get_logger("modalmap.train")
        self.step_logger = get_logger(STEP_LOGGER)
        self._stop_requested = False
        self._previous_handlers: dict[int, Any] = {}

    def stop(self) -> None:
        """Request a stop after the current step."""
        self._stop_requested = True
        self.logger.info("Stop requested, will checkpoint after current step")

    def _handle_shutdown(self, signum: int, frame: Optional[object]) -> None:
        self.logger.info(f"Received signal {signum}, finishing current step...")
        self.stop()

    def _install_signal_handlers(self) -> None:
        try:
            for signum in (signal.SIGINT, signal.SIGTERM):
                self._previous_handlers[signum] = signal.signal(signum, self._handle_shutdown)
        except ValueError:
            # not the main thread
            self.logger.debug("Signal handlers not installed")

    def _restore_signal_handlers(self) -> None:
        for signum, handler in self._previous_handlers.items():
            signal.signal(signum, handler)
        self._previous_handlers.clear()

    def run(
        self,
        samples: list[PairedSample],
        resume: Optional[Path] = None,
        handle_signals: bool = False,
    ) -> TrainResult:
        """Train on ``samples``; optionally resume from a train_state archive."""
        if not samples:
            raise ValueError("training split is empty")
        self._stop_requested = False

        image_size = int(samples[0].face.shape[-1])
        log_path = self.run_dir / STEP_LOG_NAME
        if resume is not None:
            state = TrainState.load(resume, self.config)
            truncate_step_log(log_path, state.step)
            self.logger.info(f"Resumed from {resume} at step {state.step}")
        else:
            state = TrainState.create(
                self.config, self.generator_config, self.discriminator_config
            )
            log_path.unlink(missing_ok=True)

        cfg = self.config
        dataset = PairedDataset(samples)
        batches_per_epoch = math.ceil(len(samples) / cfg.batch_size)
        total_steps = cfg.max_steps or cfg.epochs * batches_per_epoch
        checkpoints: list[Path] = []

        self.logger.info(
            f"Training started | pairs: {len(samples)} | batch: {cfg.batch_size} | "
            f"steps: {state.step}/{total_steps} | lr: {cfg.learning_rate}"
        )
        if handle_signals:
            self._install_signal_handlers()
        handler = attach_step_log(log_path)
        try:
            while state.step < total_steps and not self._stop_requested:
                epoch, offset = divmod(state.step, batches_per_epoch)
                order = epoch_order(len(samples), cfg.seed, epoch)
                batches = [
                    order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)
                ][offset:]
                loader = DataLoader(
                    dataset,
                    batch_sampler=batches,
                    num_workers=cfg.num_workers,
                    generator=torch.Generator().manual_seed(cfg.seed + epoch),
                )
                for batch in loader:
                    state, breakdown = train_step(state, batch, self.psi)
                    self.step_logger.info(
                        json.dumps({"step": state.step, "epoch": epoch, **breakdown.to_dict()})
                    )
                    if state.step % 50 == 0:
                        self.logger.debug(
                            f"step {state.step} | total_g {breakdown.total_g:.4f} | "
                            f"d {breakdown.adversarial_d:.4f}"
                        )
                    if state.step % cfg.checkpoint_every == 0:
                        checkpoints.append(
                            state.save(
                                checkpoint_path(self.run_dir, state.step),
                                image_size,
                                self.dataset_name,
                            )
                        )
                    if state.step >= total_steps or self._stop_requested:
                        break
        finally:
            detach_step_log(handler)
            self._restore_signal_handlers()

        final = checkpoint_path(self.run_dir, state.step)
        if not checkpoints or checkpoints[-1] != final:
            checkpoints.append(state.save(final, image_size, self.dataset_name))
        self.logger.info(f"Training stopped at step {state.step} | checkpoint: {final}")
        return TrainResult(
            final_step=state.step,
            checkpoints=checkpoints,
            log_path=log_path,
            interrupted=self._stop_requested,
        )


def train(
    config: TrainConfig,
    samples: list[PairedSample],
    psi: EmbeddingNetwork,
    run_dir: Path,
    generator_config: Optional[GeneratorConfig] = None,
    discriminator_config: Optional[DiscriminatorConfig] = None,
    resume: Optional[Path] = None,
    dataset_name: str = "",
) -> TrainResult:
    """Train a generator/discriminator pair on the training pairs of a split.

    Emits a checkpoint every ``checkpoint_every`` steps and at the end, and a
    JSON-lines step log ``train_log.jsonl`` in ``run_dir``.
    """
    trainer = Trainer(
        config,
        generator_config or GeneratorConfig(),
        discriminator_config or DiscriminatorConfig(),
        psi,
        run_dir,
        dataset_name,
    )
    return trainer.run(samples, resume=resume)


"""Tests for the training loop."""

import json
import signal
from pathlib import Path
from typing import Any, Callable, Optional
from unittest.mock import patch

import pytest
import torch

from modalmap.core.experiment import load_generator
from modalmap.core.losses import LossWeights
from modalmap.core.trainer import (
    STEP_LOG_NAME,
    TRAIN_STATE_KIND,
    TrainConfig,
    Trainer,
    TrainState,
    checkpoint_path,
    epoch_order,
    latest_checkpoint,
    train,
    train_step,
    truncate_step_log,
)
from modalmap.data.images import PairedDataset
from modalmap.errors import CheckpointError, NonFiniteLossError
from modalmap.models.checkpoint import load_archive, save_archive
from tests.mocks import TINY_DISCRIMINATOR, TINY_GENERATOR, make_pairs, tiny_psi


def _config(**overrides: Any) -> TrainConfig:
    values: dict[str, Any] = {
        "epochs": 1,
        "batch_size": 2,
        "seed": 3,
        "checkpoint_every": 2,
        "max_steps": 4,
    }
    values.update(overrides)
    return TrainConfig(**values)


def _train(run_dir: Path, config: TrainConfig, resume: Optional[Path] = None) -> Any:
    return train(
        config,
        make_pairs(n_subjects=3, per_subject=2, same_images=False),
        tiny_psi(),
        run_dir,
        generator_config=TINY_GENERATOR,
        discriminator_config=TINY_DISCRIMINATOR,
        resume=resume,
        dataset_name="mock",
    )


def _steps(path: Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def _generator_tensors(path: Path) -> dict[str, torch.Tensor]:
    tensors: dict[str, torch.Tensor] = load_archive(path)["tensors"]["generator"]
    return tensors


def test_checkpoints_and_step_log(tmp_path: Path) -> None:
    """Test periodic checkpoints, the final checkpoint and the JSON-lines log."""
    result = _train(tmp_path, _config())

    assert result.final_step == 4
    assert not result.interrupted
    assert result.checkpoints == [checkpoint_path(tmp_path, 2), checkpoint_path(tmp_path, 4)]
    assert latest_checkpoint(tmp_path) == checkpoint_path(tmp_path, 4)

    steps = _steps(tmp_path / STEP_LOG_NAME)
    assert [s["step"] for s in steps] == [1, 2, 3, 4]
    assert [s["epoch"] for s in steps] == [0, 0, 0, 1]
    for key in ("adversarial_g", "pixel", "feature", "style", "total_g", "adversarial_d"):
        assert key in steps[0]

    echo = load_archive(result.checkpoints[-1], kind="train_state")["config"]
    assert echo["dataset"] == "mock"
    assert echo["image_size"] == 16
    assert echo["generator"] == TINY_GENERATOR.to_dict()


def test_step_log_total_matches_weights(tmp_path: Path) -> None:
    """Test each logged total is the weighted sum of its logged parts."""
    weights = LossWeights(pixel=5.0, feature=0.5, style=2.0)
    _train(tmp_path, _config(weights=weights))
    for s in _steps(tmp_path / STEP_LOG_NAME):
        expected = s["adversarial_g"] + 5.0 * s["pixel"] + 0.5 * s["feature"] + 2.0 * s["style"]
        assert s["total_g"] == pytest.approx(expected, rel=1e-5, abs=1e-6)


def test_training_is_deterministic(tmp_path: Path) -> None:
    """Test two runs with one seed log identical losses."""
    _train(tmp_path / "a", _config())
    _train(tmp_path / "b", _config())
    assert _steps(tmp_path / "a" / STEP_LOG_NAME) == _steps(tmp_path / "b" / STEP_LOG_NAME)


def test_resume_matches_uninterrupted_run(tmp_path: Path) -> None:
    """Test stopping at step 2 and resuming reproduces the four-step run."""
    full = _train(tmp_path / "full", _config())
    resumed = _train(
        tmp_path / "resumed", _config(), resume=checkpoint_path(tmp_path / "full", 2)
    )

    assert resumed.final_step == 4
    assert _steps(tmp_path / "full" / STEP_LOG_NAME)[2:] == _steps(
        tmp_path / "resumed" / STEP_LOG_NAME
    )
    expected = _generator_tensors(full.checkpoints[-1])
    actual = _generator_tensors(resumed.checkpoints[-1])
    for name in expected:
        assert torch.equal(expected[name], actual[name]), name


def test_zero_learning_rate_leaves_weights(tmp_path: Path) -> None:
    """Test a zero learning rate still runs but changes no parameter."""
    config = _config(learning_rate=0.0)
    initial = TrainState.create(config, TINY_GENERATOR, TINY_DISCRIMINATOR)
    result = _train(tmp_path, config)

    final = _generator_tensors(result.checkpoints[-1])
    for name, tensor in initial.generator.state_dict().items():
        assert torch.equal(tensor, final[name]), name


def test_psi_is_not_updated(tmp_path: Path) -> None:
    """Test the embedding network keeps its weights through training."""
    psi = tiny_psi()
    before = psi.fingerprint()
    train(
        _config(),
        make_pairs(same_images=False),
        psi,
        tmp_path,
        generator_config=TINY_GENERATOR,
        discriminator_config=TINY_DISCRIMINATOR,
    )
    assert psi.fingerprint() == before


def test_single_step_updates_both_networks() -> None:
    """Test one step updates both networks and leaves psi without gradients."""
    config = _config()
    state = TrainState.create(config, TINY_GENERATOR, TINY_DISCRIMINATOR)
    before_g = {k: v.clone() for k, v in state.generator.state_dict().items()}
    before_d = {k: v.clone() for k, v in state.discriminator.state_dict().items()}
    psi = tiny_psi()

    dataset = PairedDataset(make_pairs(same_images=False))
    batch = {
        "ear": torch.stack([dataset[i]["ear"] for i in range(2)]),
        "face": torch.stack([dataset[i]["face"] for i in range(2)]),
    }
    state, breakdown = train_step(state, batch, psi)

    assert state.step == 1
    assert breakdown.adversarial_d > 0
    assert any(not torch.equal(v, state.generator.state_dict()[k]) for k, v in before_g.items())
    assert any(
        not torch.equal(v, state.discriminator.state_dict()[k]) for k, v in before_d.items()
    )
    assert all(p.grad is None for p in psi.parameters())


def _step_watching(
    step: Callable[..., Any], watched: torch.nn.Module, unchanged: list[bool]
) -> Callable[..., Any]:
    """Run an optimizer step and record whether ``watched`` kept its exact parameters."""

    def wrapped(*args: Any, **kwargs: Any) -> Any:
        before = [p.detach().clone() for p in watched.parameters()]
        result = step(*args, **kwargs)
        unchanged.append(all(torch.equal(b, p) for b, p in zip(before, watched.parameters())))
        return result

    return wrapped


def test_each_update_touches_only_its_network() -> None:
    """Test the D update leaves G bitwise unchanged and the G update leaves D unchanged."""
    state = TrainState.create(_config(), TINY_GENERATOR, TINY_DISCRIMINATOR)
    dataset = PairedDataset(make_pairs(same_images=False))
    batch = {
        "ear": torch.stack([dataset[i]["ear"] for i in range(2)]),
        "face": torch.stack([dataset[i]["face"] for i in range(2)]),
    }
    g_kept: list[bool] = []
    d_kept: list[bool] = []
    d_step = _step_watching(state.opt_d.step, state.generator, g_kept)
    g_step = _step_watching(state.opt_g.step, state.discriminator, d_kept)

    psi = tiny_psi()
    with patch.object(state.opt_d, "step", d_step), patch.object(state.opt_g, "step", g_step):
        for _ in range(2):
            state, _ = train_step(state, batch, psi)

    assert g_kept == [True, True]
    assert d_kept == [True, True]


def test_incomplete_archive_is_checkpoint_error(tmp_path: Path) -> None:
    """Test archives missing a tensor group or the extra section fail as CheckpointError."""
    state = TrainState.create(_config(), TINY_GENERATOR, TINY_DISCRIMINATOR)
    echo = state.config_echo(16, "mock")
    generator = dict(state.generator.state_dict())

    no_extra = save_archive(
        tmp_path / "no_extra.pt",
        TRAIN_STATE_KIND,
        echo,
        {"generator": generator, "discriminator": dict(state.discriminator.state_dict())},
    )
    no_generator = save_archive(
        tmp_path / "no_generator.pt", TRAIN_STATE_KIND, echo, {}, extra={"step": 1}
    )

    with pytest.raises(CheckpointError, match="incomplete archive"):
        TrainState.load(no_extra)
    with pytest.raises(CheckpointError, match="incomplete archive"):
        load_generator(no_extra)
    with pytest.raises(CheckpointError, match="incomplete archive"):
        load_generator(no_generator)


def test_non_finite_loss_names_component() -> None:
    """Test a NaN loss part aborts the step with its name."""
    state = TrainState.create(_config(), TINY_GENERATOR, TINY_DISCRIMINATOR)
    pairs = PairedDataset(make_pairs(n_subjects=1, per_subject=2))
    batch = {
        "ear": torch.stack([pairs[0]["ear"], pairs[1]["ear"]]),
        "face": torch.stack([pairs[0]["face"], pairs[1]["face"]]),
    }
    with patch("modalmap.core.trainer.pixel_loss", return_value=torch.tensor(float("nan"))):
        with pytest.raises(NonFiniteLossError, match="Non-finite pixel loss") as excinfo:
            train_step(state, batch, tiny_psi())
    assert excinfo.value.component == "pixel"
    assert excinfo.value.step == 1


def test_stop_request_checkpoints(tmp_path: Path) -> None:
    """Test a stop request ends the run after the current step with a checkpoint."""
    trainer = Trainer(
        _config(max_steps=10, checkpoint_every=100),
        TINY_GENERATOR,
        TINY_DISCRIMINATOR,
        tiny_psi(),
        tmp_path,
    )
    real_step = train_step

    def step_then_stop(*args: Any) -> Any:
        result = real_step(*args)
        trainer.stop()
        return result

    previous = signal.getsignal(signal.SIGINT)
    with patch("modalmap.core.trainer.train_step", side_effect=step_then_stop):
        result = trainer.run(make_pairs(), handle_signals=True)

    assert result.interrupted
    assert result.final_step == 1
    assert result.checkpoints == [checkpoint_path(tmp_path, 1)]
    assert signal.getsignal(signal.SIGINT) == previous


def test_empty_training_split(tmp_path: Path) -> None:
    """Test training refuses an empty split."""
    with pytest.raises(ValueError, match="empty"):
        train(_config(), [], tiny_psi(), tmp_path, TINY_GENERATOR, TINY_DISCRIMINATOR)


def test_truncate_step_log(tmp_path: Path) -> None:
    """Test lines past the resumed step are dropped."""
    path = tmp_path / STEP_LOG_NAME
    path.write_text("".join(json.dumps({"step": i}) + "\n" for i in range(1, 6)), "utf-8")
    truncate_step_log(path, 3)
    assert [s["step"] for s in _steps(path)] == [1, 2, 3]


def test_epoch_order_is_seeded_permutation() -> None:
    """Test epoch orders are permutations that depend on seed and epoch."""
    order = epoch_order(10, seed=1, epoch=0)
    assert sorted(order) == list(range(10))
    assert order == epoch_order(10, seed=1, epoch=0)
    assert order != epoch_order(10, seed=1, epoch=1)


def test_train_config_validation() -> None:
    """Test config checks and dict conversion."""
    with pytest.raises(ValueError, match="learning_rate"):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError, match="max_steps"):
        TrainConfig(max_steps=0)
    cfg = _config(weights=LossWeights(pixel=1.0))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg

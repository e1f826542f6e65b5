"""Tests for loss functions."""

import math

import pytest
import torch

from modalmap.core.losses import (
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    composite_generator_loss,
    composite_total,
    feature_loss,
    gram,
    pixel_loss,
    style_loss,
)
from modalmap.errors import ShapeError
from tests.mocks import random_image, tiny_psi


def _bce(logit: float, label: float) -> float:
    p = 1.0 / (1.0 + math.exp(-logit))
    return -(label * math.log(p) + (1.0 - label) * math.log(1.0 - p))


def test_zero_logits_give_log_two() -> None:
    """Test the discriminator loss is 2 ln 2 on all-zero logits."""
    zeros = torch.zeros(2, 1, 3, 3)
    assert adversarial_loss_d(zeros, zeros).item() == pytest.approx(2 * math.log(2), abs=1e-6)
    assert adversarial_loss_g(zeros).item() == pytest.approx(math.log(2), abs=1e-6)


def test_adversarial_matches_elementwise_bce() -> None:
    """Test both adversarial losses against an explicit per-patch loop."""
    gen = torch.Generator().manual_seed(0)
    real = torch.randn(2, 1, 2, 2, generator=gen, dtype=torch.float64) * 3
    fake = torch.randn(2, 1, 2, 2, generator=gen, dtype=torch.float64) * 3

    real_vals, fake_vals = real.flatten().tolist(), fake.flatten().tolist()
    expected_d = (
        sum(_bce(v, 1.0) for v in real_vals) / len(real_vals)
        + sum(_bce(v, 0.0) for v in fake_vals) / len(fake_vals)
    )
    expected_g = sum(_bce(v, 1.0) for v in fake_vals) / len(fake_vals)

    assert adversarial_loss_d(real, fake).item() == pytest.approx(expected_d, abs=1e-10)
    assert adversarial_loss_g(fake).item() == pytest.approx(expected_g, abs=1e-10)


def test_nan_logits_rejected() -> None:
    """Test NaN logits raise."""
    with pytest.raises(ValueError, match="NaN"):
        adversarial_loss_g(torch.tensor([float("nan")]))


def test_pixel_loss() -> None:
    """Test mean absolute difference and the shape check."""
    fake = torch.tensor([[0.0, 1.0], [0.5, -0.5]])
    real = torch.zeros(2, 2)
    assert pixel_loss(fake, real).item() == pytest.approx(0.5)
    assert pixel_loss(real, real).item() == 0.0
    with pytest.raises(ShapeError):
        pixel_loss(fake, torch.zeros(3))


def test_feature_loss_on_vectors() -> None:
    """Test the squared distance is divided by the vector length."""
    a = torch.tensor([1.0, 2.0, 3.0, 4.0], dtype=torch.float64)
    b = torch.zeros(4, dtype=torch.float64)
    assert feature_loss(a, b).item() == pytest.approx(30.0 / 4)
    assert feature_loss(a, a).item() == 0.0


def test_feature_loss_on_maps() -> None:
    """Test the C*H*W normaliser for spatial features."""
    a = torch.ones(1, 2, 3, 3, dtype=torch.float64)
    b = torch.zeros(1, 2, 3, 3, dtype=torch.float64)
    assert feature_loss(a, b).item() == pytest.approx(1.0)


def test_gram_matches_triple_loop() -> None:
    """Test the Gram matrix against explicit sums, and that it is PSD."""
    gen = torch.Generator().manual_seed(3)
    feat = torch.randn(1, 3, 2, 2, generator=gen, dtype=torch.float64)
    c, h, w = 3, 2, 2
    expected = torch.zeros(c, c, dtype=torch.float64)
    for i in range(c):
        for j in range(c):
            total = 0.0
            for y in range(h):
                for x in range(w):
                    total += feat[0, i, y, x].item() * feat[0, j, y, x].item()
            expected[i, j] = total / (c * h * w)

    result = gram(feat)[0]
    assert torch.allclose(result, expected, atol=1e-12)
    assert torch.allclose(result, result.T)
    assert torch.linalg.eigvalsh(result).min() >= -1e-12


def test_gram_of_vector() -> None:
    """Test a length-d vector gives a d x d matrix outer(v, v) / d."""
    v = torch.tensor([1.0, 2.0], dtype=torch.float64)
    assert torch.allclose(gram(v), torch.outer(v, v) / 2)


def test_style_loss() -> None:
    """Test the style loss is the squared Frobenius norm of the Gram difference."""
    gen = torch.Generator().manual_seed(4)
    a = torch.randn(2, 5, generator=gen, dtype=torch.float64)
    b = torch.randn(2, 5, generator=gen, dtype=torch.float64)
    expected = ((gram(a) - gram(b)) ** 2).sum(dim=(1, 2)).mean()
    assert style_loss(a, b).item() == pytest.approx(expected.item(), abs=1e-12)
    assert style_loss(a, a).item() == 0.0


def test_feature_shape_mismatch() -> None:
    """Test mismatched feature shapes raise ShapeError."""
    with pytest.raises(ShapeError, match="feature shapes differ"):
        style_loss(torch.zeros(2, 4), torch.zeros(2, 5))


def test_composite_total() -> None:
    """Test the weighted sum of the four generator terms."""
    weights = LossWeights(pixel=10.0, feature=0.5, style=2.0)
    breakdown = composite_generator_loss(
        {"adversarial_g": 0.7, "pixel": 0.1, "feature": 3.0, "style": 0.25}, weights
    )
    assert breakdown.total_g == pytest.approx(0.7 + 1.0 + 1.5 + 0.5, abs=1e-12)
    assert composite_total(1.0, 0.0, 0.0, 0.0, weights) == 1.0


def test_composite_rejects_bad_parts() -> None:
    """Test missing and non-finite parts."""
    with pytest.raises(ValueError, match="missing loss part 'style'"):
        composite_generator_loss({"adversarial_g": 1, "pixel": 1, "feature": 1}, LossWeights())
    with pytest.raises(ValueError, match="not finite"):
        composite_generator_loss(
            {"adversarial_g": 1, "pixel": float("inf"), "feature": 1, "style": 1}, LossWeights()
        )


def test_negative_weight_rejected() -> None:
    """Test loss weights must be non-negative."""
    with pytest.raises(ValueError, match="'style'"):
        LossWeights(style=-1.0)


def test_gradients_flow_through_psi() -> None:
    """Test analytic gradients of the perceptual losses match finite differences."""
    psi = tiny_psi().double()
    target = psi(random_image(16, 2).double().unsqueeze(0)).detach()
    x = random_image(16, 1).double().unsqueeze(0).requires_grad_(True)

    assert torch.autograd.gradcheck(lambda t: feature_loss(psi(t), target), (x,), eps=1e-6)
    assert torch.autograd.gradcheck(lambda t: style_loss(psi(t), target), (x,), eps=1e-6)


def test_gram_of_random_vectors_is_psd() -> None:
    """Test Gram matrices of random embeddings are symmetric with no negative eigenvalues."""
    gen = torch.Generator().manual_seed(11)
    for _ in range(100):
        v = torch.randn(16, generator=gen, dtype=torch.float64)
        g = gram(v)
        assert torch.allclose(g, g.T)
        assert torch.linalg.eigvalsh(g).min() >= -1e-10


def test_pixel_loss_gradient() -> None:
    """Test the pixel loss gradient matches finite differences."""
    gen = torch.Generator().manual_seed(12)
    real = torch.rand(3, 4, 4, generator=gen, dtype=torch.float64)
    fake = real + 0.1 + torch.rand(3, 4, 4, generator=gen, dtype=torch.float64)
    fake.requires_grad_(True)
    assert torch.autograd.gradcheck(lambda t: pixel_loss(t, real), (fake,), eps=1e-6)


def test_perceptual_hand_examples() -> None:
    """Test small feature and style losses computed by hand."""
    d = 2048
    unit = torch.zeros(d, dtype=torch.float64)
    unit[0] = 1.0
    assert feature_loss(torch.zeros(d, dtype=torch.float64), unit).item() == pytest.approx(
        1 / 2048, abs=1e-15
    )
    zero = torch.tensor([0.0, 0.0], dtype=torch.float64)
    assert feature_loss(zero, torch.tensor([3.0, 4.0], dtype=torch.float64)).item() == 12.5
    two, one = torch.tensor([2.0], dtype=torch.float64), torch.tensor([1.0], dtype=torch.float64)
    assert style_loss(two, one).item() == pytest.approx(9.0, abs=1e-12)


def test_perceptual_losses_are_homogeneous() -> None:
    """Test scaling both features by c scales feature loss by c^2 and style loss by c^4."""
    gen = torch.Generator().manual_seed(13)
    a = torch.randn(3, 6, generator=gen, dtype=torch.float64)
    b = torch.randn(3, 6, generator=gen, dtype=torch.float64)
    for c in (0.5, 2.0, 3.0):
        assert feature_loss(c * a, c * b).item() == pytest.approx(
            c**2 * feature_loss(a, b).item(), rel=1e-10
        )
        assert style_loss(c * a, c * b).item() == pytest.approx(
            c**4 * style_loss(a, b).item(), rel=1e-10
        )


def test_composite_default_weights() -> None:
    """Test the default weights (10, 0.25, 0.1) on fixed parts."""
    parts = {"adversarial_g": 0.7, "pixel": 0.2, "feature": 0.4, "style": 1.0}
    breakdown = composite_generator_loss(parts, LossWeights())
    assert breakdown.total_g == pytest.approx(2.9, abs=1e-12)


def test_composite_is_linear_in_each_weight() -> None:
    """Test the total changes by part * delta when one weight moves by delta."""
    parts = (0.7, 0.2, 0.4, 1.0)
    base = LossWeights()
    total = composite_total(*parts, base)
    for name, part in (("pixel", 0.2), ("feature", 0.4), ("style", 1.0)):
        for delta in (0.5, 3.0):
            moved = LossWeights(**{**base.to_dict(), name: getattr(base, name) + delta})
            assert composite_total(*parts, moved) == pytest.approx(total + part * delta, abs=1e-12)

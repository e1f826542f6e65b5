"""Tests for closed-set identification."""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch

from modalmap.errors import IdentificationError, ZeroNormError
from modalmap.eval.identification import (
    CmcCurve,
    ProbeSource,
    SimilarityMatrix,
    cmc,
    gallery_from_pairs,
    identify,
    match_ranks,
    similarity_matrix,
)
from tests.mocks import ConstantGenerator, IdentityGenerator, make_pairs, tiny_psi


def _hand_matrix() -> SimilarityMatrix:
    return SimilarityMatrix(
        values=np.array([[0.9, 0.1, 0.2], [0.8, 0.7, 0.1], [0.1, 0.2, 0.9]]),
        probe_ids=["a", "b", "c"],
        gallery_ids=["a", "b", "c"],
    )


def _brute_force_cmc(values: np.ndarray, probes: list[str], gallery: list[str], k: int) -> float:
    hits, valid = 0, 0
    for i, probe in enumerate(probes):
        same = [values[i, j] for j in range(len(gallery)) if gallery[j] == probe]
        if not same:
            continue
        valid += 1
        best = max(same)
        better = sum(1 for j in range(len(gallery)) if values[i, j] > best)
        if better + 1 <= k:
            hits += 1
    return hits / valid


def test_hand_computed_cmc() -> None:
    """Test a 3 x 3 matrix with one probe found only at rank 2."""
    sim = _hand_matrix()
    assert match_ranks(sim) == [1, 2, 1]
    curve = cmc(sim, ks=(1, 2))
    assert curve.accuracy_at(1) == pytest.approx(2 / 3)
    assert curve.accuracy_at(2) == 1.0
    assert curve.n_probe == 3 and curve.n_gallery == 3


def test_cmc_matches_brute_force() -> None:
    """Test CMC against direct counting on random matrices."""
    rng = np.random.default_rng(0)
    ks = list(range(1, 51))
    for _ in range(100):
        probes = [f"s{i}" for i in rng.integers(0, 12, size=50)]
        gallery = [f"s{i}" for i in rng.integers(0, 10, size=50)]
        if not set(probes) & set(gallery):
            continue
        values = rng.uniform(-1.0, 1.0, size=(50, 50))
        curve = cmc(SimilarityMatrix(values, probes, gallery), ks)
        expected = [_brute_force_cmc(values, probes, gallery, k) for k in ks]
        assert curve.accuracies == pytest.approx(expected, abs=1e-12)
        assert curve.excluded_probes == sum(1 for p in probes if p not in gallery)


def test_cmc_invariant_to_monotone_transform() -> None:
    """Test ranks only depend on the ordering of similarities."""
    rng = np.random.default_rng(1)
    values = rng.uniform(-1.0, 1.0, size=(20, 15))
    probes = [f"s{i % 5}" for i in range(20)]
    gallery = [f"s{i % 5}" for i in range(15)]
    ks = (1, 2, 5, 10)
    original = cmc(SimilarityMatrix(values, probes, gallery), ks)
    squashed = cmc(SimilarityMatrix(np.tanh(3.0 * values) ** 3, probes, gallery), ks)
    assert original.accuracies == squashed.accuracies


def test_cmc_is_non_decreasing_and_clips_ranks() -> None:
    """Test accuracies never drop and ranks past the gallery reach 1."""
    rng = np.random.default_rng(2)
    sim = SimilarityMatrix(
        rng.uniform(size=(6, 4)), [f"s{i % 4}" for i in range(6)], [f"s{i}" for i in range(4)]
    )
    curve = cmc(sim, ks=(20, 1, 2, 2))
    assert curve.ranks == [1, 2, 20]
    assert curve.accuracies == sorted(curve.accuracies)
    assert curve.accuracy_at(20) == 1.0


def test_ties_keep_gallery_order() -> None:
    """Test equal similarities rank the earlier gallery entry first."""
    sim = SimilarityMatrix(np.array([[0.5, 0.5]]), ["b"], ["a", "b"])
    assert match_ranks(sim) == [2]


def test_probes_absent_from_gallery_are_excluded() -> None:
    """Test probes without an enrolled identity are left out and counted."""
    sim = SimilarityMatrix(np.array([[0.9, 0.1], [0.5, 0.4]]), ["a", "z"], ["a", "b"])
    curve = cmc(sim, ks=(1,))
    assert curve.excluded_probes == 1
    assert curve.accuracy_at(1) == 1.0

    none_valid = SimilarityMatrix(np.array([[0.9]]), ["z"], ["a"])
    with pytest.raises(IdentificationError, match="no probe identity"):
        cmc(none_valid)


def test_cmc_rejects_bad_input() -> None:
    """Test empty matrices and non-positive ranks."""
    with pytest.raises(IdentificationError, match="empty"):
        cmc(SimilarityMatrix(np.zeros((0, 3)), [], ["a", "b", "c"]))
    with pytest.raises(IdentificationError, match="positive"):
        cmc(_hand_matrix(), ks=(0, 1))
    with pytest.raises(IdentificationError, match="rank 3"):
        cmc(_hand_matrix(), ks=(1,)).accuracy_at(3)


def test_similarity_is_cosine() -> None:
    """Test similarities are cosines in [-1, 1]."""
    probes = torch.tensor([[1.0, 0.0], [1.0, 1.0]])
    gallery = torch.tensor([[2.0, 0.0], [0.0, -3.0]])
    sim = similarity_matrix(probes, gallery, ["a", "b"], ["a", "b"])
    expected = np.array([[1.0, 0.0], [1 / np.sqrt(2), -1 / np.sqrt(2)]])
    assert np.allclose(sim.values, expected, atol=1e-12)
    assert sim.values.dtype == np.float64


def test_zero_norm_vector_is_named() -> None:
    """Test a zero feature vector raises with its role, index and identity."""
    with pytest.raises(ZeroNormError, match="gallery 1 \\('b'\\)"):
        similarity_matrix(
            np.ones((2, 3)), np.array([[1.0, 0, 0], [0, 0, 0]]), ["a", "b"], ["a", "b"]
        )


def test_label_and_dimension_mismatch() -> None:
    """Test disagreeing shapes are rejected."""
    with pytest.raises(IdentificationError, match="differ in count"):
        similarity_matrix(np.ones((2, 3)), np.ones((2, 3)), ["a"], ["a", "b"])
    with pytest.raises(IdentificationError, match="probe dim 3"):
        similarity_matrix(np.ones((1, 3)), np.ones((1, 4)), ["a"], ["a"])
    with pytest.raises(IdentificationError, match="does not match"):
        SimilarityMatrix(np.zeros((2, 2)), ["a"], ["a", "b"])


def test_identify_with_ground_truth_generator() -> None:
    """Test reconstructed probes equal to the real faces are all found at rank 1."""
    pairs = make_pairs(n_subjects=3, per_subject=2, same_images=True)
    curve, sim = identify(IdentityGenerator(), tiny_psi(), pairs, gallery_from_pairs(pairs))
    assert sim.shape == (6, 6)
    assert curve.accuracy_at(1) == 1.0
    assert curve.labels["probes"] == "reconstructed"


def test_identify_real_probes_need_no_generator() -> None:
    """Test the real-face baseline runs without a generator."""
    pairs = make_pairs(n_subjects=2, per_subject=2)
    curve, _ = identify(
        None, tiny_psi(), pairs, gallery_from_pairs(pairs), ks=(1,), probe_source=ProbeSource.REAL
    )
    assert curve.accuracy_at(1) == 1.0
    assert curve.labels["probes"] == "real"

    with pytest.raises(IdentificationError, match="need a generator"):
        identify(None, tiny_psi(), pairs, gallery_from_pairs(pairs))


def test_identify_constant_generator_is_chance_level() -> None:
    """Test identical probes all tie, so each is found where its identity first appears."""
    pairs = make_pairs(n_subjects=3, per_subject=1)
    curve, sim = identify(
        ConstantGenerator(0.0), tiny_psi(), pairs, gallery_from_pairs(pairs), ks=(1, 3)
    )
    assert np.allclose(sim.values, sim.values[0])
    assert curve.accuracy_at(1) == pytest.approx(1 / 3)
    assert curve.accuracy_at(3) == 1.0


def test_identify_empty_sets() -> None:
    """Test empty probe or gallery sets."""
    pairs = make_pairs(n_subjects=1, per_subject=1)
    with pytest.raises(IdentificationError, match="probe set is empty"):
        identify(IdentityGenerator(), tiny_psi(), [], gallery_from_pairs(pairs))
    with pytest.raises(IdentificationError, match="gallery is empty"):
        identify(IdentityGenerator(), tiny_psi(), pairs, [])


def test_outputs_are_written(tmp_path: Path) -> None:
    """Test the CMC JSON and similarity CSV."""
    curve = cmc(_hand_matrix(), ks=(1, 2))
    curve.labels["split"] = "sid_test"
    path = curve.save(tmp_path / "cmc.json")
    loaded = json.loads(path.read_text(encoding="utf-8"))
    assert loaded["split"] == "sid_test"
    assert loaded["accuracies"] == pytest.approx([2 / 3, 1.0])

    csv = _hand_matrix().save_csv(tmp_path / "sim.csv")
    frame = pd.read_csv(csv, index_col="probe_id")
    assert list(frame.columns) == ["a", "b", "c"]
    assert frame.loc["b", "b"] == pytest.approx(0.7)


def test_curve_validation() -> None:
    """Test ranks and accuracies must align."""
    with pytest.raises(IdentificationError):
        CmcCurve(ranks=[1, 2], accuracies=[0.5], n_probe=1, n_gallery=1)


def test_similarity_ignores_positive_scale() -> None:
    """Test rescaling probe features by positive factors leaves similarities unchanged."""
    rng = np.random.default_rng(31)
    probes = rng.normal(size=(6, 8))
    gallery = rng.normal(size=(5, 8))
    ids_p = [f"p{i}" for i in range(6)]
    ids_g = [f"p{i}" for i in range(5)]
    base = similarity_matrix(probes, gallery, ids_p, ids_g)
    scaled = similarity_matrix(probes * rng.uniform(0.1, 10.0, size=(6, 1)), gallery, ids_p, ids_g)
    assert np.allclose(base.values, scaled.values, atol=1e-12)
    assert match_ranks(base) == match_ranks(scaled)

import numpy as np
import pytest

from padloop.datasets import (
    ElicitationDataset,
    InductionDataset,
    generate_elicitation,
    generate_induction,
    simulate_induction,
    stratified_pad,
)
from padloop.errors import InvalidInputError
from padloop.features import FeatureMode
from padloop.stats import spearman


@pytest.fixture(scope="module")
def elic183():
    return generate_elicitation(183, 0)


def test_elicitation_count_and_shape(elic183):
    assert len(elic183) == 183
    assert elic183.features.shape == (183, 56)
    assert elic183.labels.shape == (183, 3)


def test_label_marginals_cover_scale():
    for seed in range(5):
        F = stratified_pad(50, np.random.default_rng(seed))
        assert np.all(F.min(axis=0) <= 2) and np.all(F.max(axis=0) >= 8)
        assert np.all((F >= 1) & (F <= 9))


def test_stratified_one_point_per_stratum():
    F = stratified_pad(40, np.random.default_rng(1))
    for ell in range(3):
        cells = np.floor((F[:, ell] - 1) / 8 * 40).astype(int)
        assert sorted(cells) == list(range(40))


def test_elicitation_deterministic():
    a, b = generate_elicitation(12, 4), generate_elicitation(12, 4)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.labels, generate_elicitation(12, 5).labels)


def test_modes_share_windows():
    # same seed, different mode: same labels, feature widths differ
    a, b = generate_elicitation(5, 2, FeatureMode.EEG), generate_elicitation(5, 2, FeatureMode.BANDS)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.features.shape == (5, 14) and b.features.shape == (5, 56)


def test_induction_count_and_determinism():
    a, b = generate_induction(60, 0), generate_induction(60, 0)
    assert len(a) == 60 and a.features.shape == (60, 56)
    np.testing.assert_array_equal(a.qot, b.qot)
    np.testing.assert_array_equal(a.features, b.features)
    assert np.all(a.qot > 0)


def test_induction_fatigue_direction():
    ds = generate_induction(60, 0)
    res = spearman(ds.qot, np.arange(60))
    assert res.r < 0 and res.p_one_tailed < 0.05


def test_induction_fatigue_accumulates():
    run = simulate_induction(30, 3)
    assert np.all(np.diff(run.fatigue) > 0)


def test_generators_reject_empty():
    with pytest.raises(InvalidInputError):
        generate_elicitation(0, 0)
    with pytest.raises(InvalidInputError):
        generate_induction(0, 0)


def test_dataset_invariants():
    with pytest.raises(InvalidInputError):
        ElicitationDataset(np.zeros((2, 14)), np.full((2, 3), 9.5), FeatureMode.EEG)
    with pytest.raises(InvalidInputError):
        ElicitationDataset(np.zeros((2, 14)), np.full((3, 3), 5.0), FeatureMode.EEG)
    with pytest.raises(InvalidInputError):
        InductionDataset(np.zeros((2, 14)), [0.3, 0.0], FeatureMode.EEG)
    with pytest.raises(InvalidInputError):
        InductionDataset(np.zeros((2, 13)), [0.3, 0.2], FeatureMode.EEG)

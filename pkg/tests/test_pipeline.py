import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from padloop.datasets import generate_elicitation
from padloop.dbn import TrainConfig
from padloop.features import FeatureMode
from padloop.kernels import KernelParams
from padloop.pipeline import (
    heuristic_kernels,
    loo_mse,
    median_sq_dist,
    split_indices,
    train_pad_stage,
    train_raw_baseline,
)


@given(st.integers(1, 300), st.floats(0, 0.9), st.integers(0, 2**31))
def test_split_is_a_partition(m, fraction, seed):
    kept, held = split_indices(m, fraction, seed)
    assert np.array_equal(np.sort(np.concatenate([kept, held])), np.arange(m))
    assert kept.size >= 1
    assert np.all(np.diff(kept) > 0) and np.all(np.diff(held) > 0)


def test_split_is_seeded():
    a, b = split_indices(50, 0.2, 3), split_indices(50, 0.2, 3)
    assert np.array_equal(a[1], b[1]) and a[1].size == 10


def test_median_sq_dist():
    X = np.array([[0.0], [1.0], [3.0]])
    assert median_sq_dist(X) == 4.0
    assert median_sq_dist(np.zeros((4, 2))) == 1.0
    assert median_sq_dist(np.ones((1, 2))) == 1.0


def test_heuristic_kernels():
    X = np.array([[0.0], [1.0], [3.0]])
    F = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0], [2.0, 2.0, 2.0]])
    ks = heuristic_kernels(X, F, 0.1)
    assert [k.alpha for k in ks] == [14 / 3, 4.0, 14 / 3]
    assert all(k.beta == 4.0 and k.noise_var == 0.1 for k in ks)


def test_loo_mse_matches_refitting():
    rng = np.random.default_rng(0)
    X, F = rng.normal(size=(8, 2)), rng.uniform(1, 9, (8, 3))
    ks = [KernelParams(2.0, 1.5, 0.2)] * 3
    sq = []
    for i in range(8):
        keep = np.arange(8) != i
        for ell in range(3):
            d = ((X[keep][:, None] - X[keep][None]) ** 2).sum(-1)
            K = 2.0 * np.exp(-d / 3.0) + 0.2 * np.eye(7)
            k = 2.0 * np.exp(-((X[keep] - X[i]) ** 2).sum(-1) / 3.0)
            sq.append((k @ np.linalg.solve(K, F[keep, ell]) - F[i, ell]) ** 2)
    assert abs(loo_mse(X, F, ks) - np.mean(sq)) < 1e-10


def test_pad_stage_small_run():
    elic = generate_elicitation(30, 1, FeatureMode.EEG)
    stage = train_pad_stage(elic, TrainConfig(epochs=2, finetune_epochs=3), holdout_fraction=0.2,
                            architecture=(14, 6, 4))
    assert stage.model.dbn.architecture == (14, 6, 4)
    assert np.intersect1d(stage.fit_rows, stage.holdout_rows).size == 0
    assert stage.holdout_rows.size == 6
    assert np.isfinite(stage.train_mse) and np.isfinite(stage.validation_mse)
    raw = train_raw_baseline(elic, holdout_fraction=0.2, seed=0)
    assert np.isfinite(raw.validation_mse)

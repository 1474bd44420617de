"""Synthetic labeled datasets: PAD-rated windows and fatigue-driven trial runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .features import FeatureMode, extract_features
from .simulator import (
    EegSynthParams,
    OperatorParams,
    OperatorState,
    initial_state,
    operator_step,
    perform_trial,
    spawn_streams,
    synth_eeg,
)


@dataclass(frozen=True)
class ElicitationDataset:
    """Feature rows with their PAD ratings."""

    features: np.ndarray  # (m, n)
    labels: np.ndarray  # (m, 3), in [1, 9]
    mode: FeatureMode

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.features, dtype=float))
        F = np.atleast_2d(np.asarray(self.labels, dtype=float))
        mode = FeatureMode(self.mode)
        if E.shape[0] != F.shape[0] or F.shape[1:] != (3,):
            raise InvalidInputError(f"features {E.shape} and labels {F.shape} do not align")
        if E.size and E.shape[1] != mode.n_features:
            raise InvalidInputError(f"{mode.value} features need {mode.n_features} columns, got {E.shape[1]}")
        if np.any(F < 1) or np.any(F > 9):
            raise InvalidInputError("PAD labels must lie in [1, 9]")
        object.__setattr__(self, "features", E)
        object.__setattr__(self, "labels", F)
        object.__setattr__(self, "mode", mode)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class InductionDataset:
    """Feature rows with the performance of the trial each was recorded in."""

    features: np.ndarray  # (m, n)
    qot: np.ndarray  # (m,), > 0
    mode: FeatureMode

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.features, dtype=float))
        q = np.asarray(self.qot, dtype=float).ravel()
        mode = FeatureMode(self.mode)
        if E.shape[0] != q.size:
            raise InvalidInputError(f"{E.shape[0]} feature rows but {q.size} performance values")
        if E.size and E.shape[1] != mode.n_features:
            raise InvalidInputError(f"{mode.value} features need {mode.n_features} columns, got {E.shape[1]}")
        if np.any(q <= 0):
            raise InvalidInputError("performance values must be positive")
        object.__setattr__(self, "features", E)
        object.__setattr__(self, "qot", q)
        object.__setattr__(self, "mode", mode)

    def __len__(self) -> int:
        return self.qot.size


def stratified_pad(m: int, rng: np.random.Generator) -> np.ndarray:
    """Latin-hypercube PAD ratings: each axis gets one jittered point per 1/m stratum of [1, 9]."""
    u = np.column_stack([(rng.permutation(m) + rng.random(m)) / m for _ in range(3)])
    return 1.0 + 8.0 * u


def generate_elicitation(m_f: int, seed: int, mode=FeatureMode.BANDS,
                         eeg: EegSynthParams | None = None) -> ElicitationDataset:
    """Windows synthesized at stratified PAD states, labeled with those states."""
    if m_f < 1:
        raise InvalidInputError("m_f must be at least 1")
    mode = FeatureMode(mode)
    ss = np.random.SeedSequence(int(seed))
    label_seq, eeg_seq = ss.spawn(2)
    labels = stratified_pad(m_f, np.random.default_rng(label_seq))
    rng = np.random.default_rng(eeg_seq)
    rows = [extract_features(synth_eeg(OperatorState(pad), rng, eeg, f"elic{i}"), mode).values
            for i, pad in enumerate(labels)]
    return ElicitationDataset(np.vstack(rows), labels, mode)


@dataclass(frozen=True)
class InductionRun:
    """Dataset plus the hidden operator trajectory behind it."""

    dataset: InductionDataset
    true_pad: np.ndarray
    fatigue: np.ndarray


def simulate_induction(m_b: int, seed: int, mode=FeatureMode.BANDS, operator: OperatorParams | None = None,
                       eeg: EegSynthParams | None = None) -> InductionRun:
    if m_b < 1:
        raise InvalidInputError("m_b must be at least 1")
    mode = FeatureMode(mode)
    operator = operator or OperatorParams()
    rngs = spawn_streams(seed)
    state = initial_state(operator)
    rows, q, pads, fat = [], [], [], []
    for i in range(m_b):
        state = operator_step(state, np.zeros(3), operator, rngs["operator"])
        rows.append(extract_features(synth_eeg(state, rngs["eeg"], eeg, f"trial{i}"), mode).values)
        q.append(perform_trial(state, operator, rngs["trial"]).q)
        pads.append(state.pad)
        fat.append(state.fatigue)
    return InductionRun(InductionDataset(np.vstack(rows), q, mode), np.array(pads), np.array(fat))


def generate_induction(m_b: int, seed: int, mode=FeatureMode.BANDS, operator: OperatorParams | None = None,
                       eeg: EegSynthParams | None = None) -> InductionDataset:
    """One open-loop session of ``m_b`` trials with accumulating fatigue and no stimuli."""
    return simulate_induction(m_b, seed, mode, operator, eeg).dataset

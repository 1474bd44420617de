"""Fuzzy-logic stimulus controller.

The performance posterior is turned into a standardized error
``eps = mean / q_r - beta_r`` and its one-step change.  Both are fuzzified
over five triangular sets, combined by max-min inference over a 5x5 rule
table, and defuzzified by centroid into a differential PAD action.  The
stimulus whose rating is nearest to ``f_r + action`` is delivered, but only
when ``P{q >= q_r} < beta_r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .gp import QotPosterior, prob_q_at_least

INPUT_LABELS = ("NB", "NS", "ZE", "PS", "PB")
OUTPUT_LABELS = ("Z", "N", "S", "M", "L", "LL")
NULL_STIMULUS = 0

# rows: error NB..PB, columns: delta NB..PB
DEFAULT_RULES = (
    ("LL", "LL", "L", "M", "S"),
    ("LL", "L", "M", "S", "N"),
    ("L", "M", "Z", "Z", "Z"),
    ("M", "S", "Z", "Z", "Z"),
    ("S", "N", "Z", "Z", "Z"),
)
DEFAULT_CENTER_LEVELS = {"Z": 0.0, "N": 0.5, "S": 1.25, "M": 2.0, "L": 3.0, "LL": 4.0}


@dataclass(frozen=True)
class ControllerConfig:
    q_r: float = 0.45
    beta_r: float = 0.8
    f_r: tuple = (4.5, 4.5, 4.5)

    def __post_init__(self):
        if not (self.q_r > 0 and np.isfinite(self.q_r)):
            raise InvalidInputError(f"q_r must be positive, got {self.q_r}")
        if not (0 < self.beta_r < 1):
            raise InvalidInputError(f"beta_r must lie in (0, 1), got {self.beta_r}")
        f_r = tuple(float(v) for v in self.f_r)
        if len(f_r) != 3:
            raise InvalidInputError("f_r must be a PAD 3-vector")
        object.__setattr__(self, "f_r", f_r)


@dataclass(frozen=True)
class TriangularMF:
    left: float
    peak: float
    right: float

    def __post_init__(self):
        if not (self.left <= self.peak <= self.right) or self.left == self.right:
            raise InvalidInputError(f"triangle needs left <= peak <= right, got {self.left, self.peak, self.right}")

    def __call__(self, x: float) -> float:
        if x == self.peak:
            return 1.0
        if x < self.peak:
            return 0.0 if x <= self.left else (x - self.left) / (self.peak - self.left)
        return 0.0 if x >= self.right else (self.right - x) / (self.right - self.peak)


@dataclass(frozen=True)
class FuzzyPartition:
    universe: tuple
    mfs: tuple

    def __post_init__(self):
        lo, hi = (float(v) for v in self.universe)
        mfs = tuple(m if isinstance(m, TriangularMF) else TriangularMF(*m) for m in self.mfs)
        if not lo < hi:
            raise InvalidInputError("universe must be a non-empty interval")
        if len(mfs) != len(INPUT_LABELS):
            raise InvalidInputError(f"need {len(INPUT_LABELS)} membership functions, got {len(mfs)}")
        peaks = np.array([m.peak for m in mfs])
        if np.any(np.diff(peaks) <= 0):
            raise InvalidInputError("membership peaks must be strictly increasing")
        object.__setattr__(self, "universe", (lo, hi))
        object.__setattr__(self, "mfs", mfs)
        # complete cover: every point of the universe belongs somewhere, nowhere above 1
        grid = np.unique(np.concatenate([np.linspace(lo, hi, 2001), peaks.clip(lo, hi)]))
        totals = np.array([self.fuzzify(x).sum() for x in grid])
        if np.any(totals <= 0) or np.any(totals > 1.0001):
            raise InvalidInputError("membership functions must cover the universe with sums in (0, 1.0001]")

    @classmethod
    def symmetric(cls, lo: float, hi: float) -> "FuzzyPartition":
        """Five triangles with evenly spaced peaks from lo to hi, overlapping at half height."""
        peaks = np.linspace(lo, hi, len(INPUT_LABELS))
        half = peaks[1] - peaks[0]
        return cls((lo, hi), tuple(TriangularMF(p - half, p, p + half) for p in peaks))

    def fuzzify(self, x: float) -> np.ndarray:
        x = min(max(float(x), self.universe[0]), self.universe[1])
        return np.array([m(x) for m in self.mfs])


def fuzzify(x: float, partition: FuzzyPartition) -> np.ndarray:
    """Membership degrees of x (clamped into the universe) in NB..PB."""
    return partition.fuzzify(x)


@dataclass(frozen=True)
class RuleTable:
    cells: tuple

    def __post_init__(self):
        cells = tuple(tuple(str(c) for c in row) for row in self.cells)
        n = len(INPUT_LABELS)
        if len(cells) != n or any(len(row) != n for row in cells):
            raise InvalidInputError("rule table must be 5 x 5")
        for row in cells:
            for c in row:
                if c not in OUTPUT_LABELS:
                    raise InvalidInputError(f"unknown output label {c!r}")
        idx = np.array([[OUTPUT_LABELS.index(c) for c in row] for row in cells])
        if np.any(np.diff(idx, axis=0) > 0) or np.any(np.diff(idx, axis=1) > 0):
            raise InvalidInputError("rule table is not monotone: more negative error or delta must not lower the action")
        if np.any(idx[2:, 2:] != 0):
            raise InvalidInputError("rule table must map non-negative error and delta to Z")
        object.__setattr__(self, "cells", cells)

    @property
    def index(self) -> np.ndarray:
        return np.array([[OUTPUT_LABELS.index(c) for c in row] for row in self.cells])


def fuzzy_infer(mu, pi, table) -> np.ndarray:
    """Max-min composition: ``tau_l = max over cells labeled l of min(mu_i, pi_j)``.

    ``table`` is a :class:`RuleTable` or any 5x5 grid of output labels.
    """
    mu = np.asarray(mu, dtype=float)
    pi = np.asarray(pi, dtype=float)
    strength = np.minimum.outer(mu, pi)
    cells = table.cells if isinstance(table, RuleTable) else table
    idx = np.array([[OUTPUT_LABELS.index(c) for c in row] for row in cells])
    tau = np.zeros(len(OUTPUT_LABELS))
    for label in range(len(OUTPUT_LABELS)):
        mask = idx == label
        if mask.any():
            tau[label] = strength[mask].max()
    return tau


def default_centers() -> np.ndarray:
    return np.array([[DEFAULT_CENTER_LEVELS[label]] * 3 for label in OUTPUT_LABELS])


def defuzzify(tau, centers) -> np.ndarray:
    """Centroid of the non-Z output centres weighted by tau; zero when nothing fires."""
    tau = np.array(tau, dtype=float)
    centers = np.asarray(centers, dtype=float)
    tau[0] = 0.0
    total = tau.sum()
    if total == 0:
        return np.zeros(centers.shape[1])
    return tau @ centers / total


@dataclass(frozen=True)
class StimulusLibrary:
    """Stimulus ids with absolute PAD ratings; id 0 is the null (no stimulus) entry."""

    ids: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=int).ravel()
        ratings = np.atleast_2d(np.asarray(self.ratings, dtype=float))
        if ids.size == 0 or ratings.shape != (ids.size, 3):
            raise InvalidInputError("library needs one PAD triple per id")
        if np.unique(ids).size != ids.size:
            raise InvalidInputError("stimulus ids must be unique")
        null = ids == NULL_STIMULUS
        if not null.any():
            raise InvalidInputError("library must contain the null stimulus (id 0)")
        if np.any(ratings[null] != 0):
            raise InvalidInputError("the null stimulus has rating 0")
        real = ratings[~null]
        if np.any(real < 1) or np.any(real > 9):
            raise InvalidInputError("stimulus ratings must lie in [1, 9]")
        order = np.argsort(ids, kind="stable")
        object.__setattr__(self, "ids", ids[order])
        object.__setattr__(self, "ratings", ratings[order])

    def rating(self, stimulus_id: int) -> np.ndarray:
        hit = np.flatnonzero(self.ids == stimulus_id)
        if hit.size == 0:
            raise InvalidInputError(f"unknown stimulus id {stimulus_id}")
        return self.ratings[hit[0]]


def default_library(n: int = 40, seed: int = 7) -> StimulusLibrary:
    """Null entry plus ``n`` stimuli: a diagonal ladder above neutral and seeded scattered ratings."""
    ladder = np.linspace(5.0, 8.5, 8)
    rng = np.random.default_rng(seed)
    scattered = np.round(rng.uniform(1.0, 9.0, (max(n - ladder.size, 0), 3)), 2)
    ratings = np.vstack([np.zeros(3), np.column_stack([ladder] * 3), scattered])[: n + 1]
    return StimulusLibrary(np.arange(ratings.shape[0]), ratings)


@dataclass(frozen=True)
class ControlAction:
    pad_value: np.ndarray
    stimulus_id: int
    gate: int
    tau: np.ndarray = field(default_factory=lambda: np.zeros(len(OUTPUT_LABELS)))

    def __post_init__(self):
        if self.gate == 0 and self.stimulus_id != NULL_STIMULUS:
            raise InvalidInputError("a closed gate must deliver the null stimulus")


def standardized_error(q_mean: float, cfg: ControllerConfig) -> float:
    return q_mean / cfg.q_r - cfg.beta_r


def delta_error(eps: float, eps_prev: float | None) -> float:
    """One-step change of the error; 0 on the first step (``eps_prev`` is None)."""
    return 0.0 if eps_prev is None else eps - eps_prev


def gate(prob: float, cfg: ControllerConfig) -> int:
    return int(prob < cfg.beta_r)


def select_stimulus(u_hat, lib: StimulusLibrary, gate_value: int, f_r=(4.5, 4.5, 4.5)) -> ControlAction:
    """Nearest library rating to ``f_r + u_hat`` (lowest id on ties).

    A closed gate or a zero action selects the null entry, which never takes
    part in the distance match.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    if gate_value == 0 or not np.any(u_hat):
        return ControlAction(u_hat, NULL_STIMULUS, int(gate_value))
    target = np.asarray(f_r, dtype=float) + u_hat
    real = lib.ids != NULL_STIMULUS
    if not real.any():
        return ControlAction(u_hat, NULL_STIMULUS, int(gate_value))
    d = np.linalg.norm(lib.ratings[real] - target, axis=1)
    return ControlAction(u_hat, int(lib.ids[real][np.argmin(d)]), 1)


@dataclass(frozen=True)
class FuzzyController:
    cfg: ControllerConfig = field(default_factory=ControllerConfig)
    error_partition: FuzzyPartition = field(default_factory=lambda: FuzzyPartition.symmetric(-1.0, 1.0))
    delta_partition: FuzzyPartition = field(default_factory=lambda: FuzzyPartition.symmetric(-0.5, 0.5))
    table: RuleTable = field(default_factory=lambda: RuleTable(DEFAULT_RULES))
    centers: np.ndarray = field(default_factory=default_centers)
    library: StimulusLibrary = field(default_factory=default_library)

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.shape != (len(OUTPUT_LABELS), 3):
            raise InvalidInputError("need six PAD centre vectors")
        if np.any(centers[0] != 0):
            raise InvalidInputError("the Z centre must be the zero action")
        object.__setattr__(self, "centers", centers)


def controller_step(qot: QotPosterior, prev_eps: float | None, ctrl: FuzzyController):
    """One control decision.

    Returns
    -------
    (ControlAction, float)
        The action and the standardized error, which the caller feeds back as
        ``prev_eps`` on the next step.
    """
    cfg = ctrl.cfg
    eps = standardized_error(qot.mean, cfg)
    d_eps = delta_error(eps, prev_eps)
    k_r = gate(prob_q_at_least(qot, cfg.q_r), cfg)
    if k_r == 0:
        return ControlAction(np.zeros(3), NULL_STIMULUS, 0), eps
    tau = fuzzy_infer(fuzzify(eps, ctrl.error_partition), fuzzify(d_eps, ctrl.delta_partition), ctrl.table)
    u_hat = defuzzify(tau, ctrl.centers)
    action = select_stimulus(u_hat, ctrl.library, 1, cfg.f_r)
    return ControlAction(action.pad_value, action.stimulus_id, 1, tau), eps

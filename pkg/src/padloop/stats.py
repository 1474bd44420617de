"""Rank correlation with a permutation p-value."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of the positions they occupy."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sorted_x = x[order]
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def _centered_unit(r: np.ndarray) -> np.ndarray:
    c = r - r.mean()
    return c / np.sqrt(c @ c)


@dataclass(frozen=True)
class SpearmanResult:
    r: float
    p_one_tailed: float
    alternative: str

    def __iter__(self):
        return iter((self.r, self.p_one_tailed))


def spearman(x, y, n_permutations: int = 10_000, seed: int = 0, alternative: str = "auto") -> SpearmanResult:
    """Spearman's rho and a one-tailed permutation p-value.

    ``alternative`` is ``"greater"``, ``"less"`` or ``"auto"`` (the tail the
    observed sign points to).  The p-value counts the observed statistic among
    the permutations, so it is never zero.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise InvalidInputError(f"inputs differ in length: {x.size} vs {y.size}")
    if x.size < 3:
        raise InvalidInputError("need at least 3 pairs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("inputs must be finite")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("rank correlation is undefined for a constant input")
    if alternative not in ("auto", "greater", "less"):
        raise InvalidInputError(f"unknown alternative {alternative!r}")
    ux = _centered_unit(average_ranks(x))
    uy = _centered_unit(average_ranks(y))
    r = float(np.clip(ux @ uy, -1.0, 1.0))
    if alternative == "auto":
        alternative = "less" if r < 0 else "greater"
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    chunk = 2000
    while done < n_permutations:
        n = min(chunk, n_permutations - done)
        perms = rng.permuted(np.tile(uy, (n, 1)), axis=1)
        null = perms @ ux
        # small slack so permutations tying the observed value count as extreme
        if alternative == "greater":
            hits += int(np.sum(null >= r - 1e-12))
        else:
            hits += int(np.sum(null <= r + 1e-12))
        done += n
    return SpearmanResult(r, (hits + 1) / (n_permutations + 1), alternative)

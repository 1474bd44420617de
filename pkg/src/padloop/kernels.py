"""Squared-exponential covariance shared by both regression stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class KernelParams:
    """``alpha * exp(-|x - y|^2 / (2 beta))`` plus ``noise_var`` on the diagonal of training Grams.

    ``beta`` is the squared length scale.
    """

    alpha: float
    beta: float
    noise_var: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "noise_var"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise InvalidInputError(f"kernel {name} must be finite, got {v}")
            object.__setattr__(self, name, float(v))
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidInputError(f"kernel alpha and beta must be positive, got alpha={self.alpha}, beta={self.beta}")
        if self.noise_var < 0:
            raise InvalidInputError(f"noise variance must be non-negative, got {self.noise_var}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "noise_var": self.noise_var}


def rbf_kernel(x, y, p: KernelParams) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise InvalidInputError(f"kernel inputs differ in length: {x.size} vs {y.size}")
    d = x - y
    return float(p.alpha * np.exp(-(d @ d) / (2.0 * p.beta)))


def sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows.

    Computed from explicit differences so identical rows give exactly zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError(f"inputs differ in dimension: {X.shape[1]} vs {Y.shape[1]}")
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def rbf_gram(X: np.ndarray, Y: np.ndarray, p: KernelParams) -> np.ndarray:
    """Noise-free cross-covariance matrix between the rows of X and Y."""
    return p.alpha * np.exp(-sq_dists(X, Y) / (2.0 * p.beta))


JITTER_START = 1e-10
JITTER_MAX = 1e-4


def stable_cholesky(K: np.ndarray):
    """Lower Cholesky factor of K, escalating diagonal jitter 1e-10 -> 1e-4 if needed.

    Returns ``(L, jitter)``; raises :class:`NumericalFailureError` when even the
    largest jitter leaves K indefinite.
    """
    from .errors import NumericalFailureError

    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-12):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalFailureError(f"covariance matrix is not positive definite even with jitter {JITTER_MAX:g}")

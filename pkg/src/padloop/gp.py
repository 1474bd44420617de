"""Two-stage GP regression: features -> PAD (deep kernel), PAD -> performance.

Stage one runs three independent zero-mean GPs, one per PAD dimension, on the
DBN latent vectors.  Stage two is a single zero-mean GP on PAD means whose
hyperparameters come from repeated k-fold cross-validation over a log grid.
The two are composed either by plugging in the PAD mean, or, for the marginal
density of an observed performance value, by a Laplace approximation over
the PAD posterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import norm

from .dbn import DbnParams, MinMaxScaler, forward
from .errors import InvalidInputError, NumericalFailureError
from .kernels import KernelParams, rbf_gram, stable_cholesky

PAD_DIMS = ("pleasure", "arousal", "dominance")
VAR_CLAMP = 1e-10
RESIDUAL_TOL = 1e-6

ALPHA_RANGE = (0.01, 0.1)
BETA_RANGE = (1.0, 3.0)


@dataclass(frozen=True)
class PadPosterior:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).ravel()
        var = np.array(self.var, dtype=float).ravel()
        if mean.shape != (3,) or var.shape != (3,):
            raise InvalidInputError("PAD posterior needs 3-vectors for mean and var")
        if np.any(var < 0) or not np.all(np.isfinite(var)):
            raise InvalidInputError("PAD posterior variances must be finite and non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)


@dataclass(frozen=True)
class QotPosterior:
    mean: float
    var: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.var)) or self.var < 0:
            raise InvalidInputError(f"invalid performance posterior (mean={self.mean}, var={self.var})")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "var", float(self.var))


class ExactGp:
    """Zero-mean GP with a fixed RBF kernel, conditioned once on (X, y)."""

    def __init__(self, X, y, kernel: KernelParams):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        self.kernel = kernel
        if self.X.shape[0] != self.y.size or self.y.size == 0:
            raise InvalidInputError(f"GP needs matching non-empty inputs/targets, got {self.X.shape[0]} vs {self.y.size}")
        K = rbf_gram(self.X, self.X, kernel) + kernel.noise_var * np.eye(self.y.size)
        self.chol, self.jitter = stable_cholesky(K)
        self.weights = cho_solve((self.chol, True), self.y)
        if self.jitter > 0:
            # jitter hides exact singularity; an inconsistent system must still fail
            resid = np.linalg.norm(K @ self.weights - self.y)
            if resid > RESIDUAL_TOL * max(1.0, np.linalg.norm(self.y)):
                raise NumericalFailureError(
                    f"Gram matrix is singular for these targets (residual {resid:.3g} after jitter {self.jitter:g})"
                )

    def predict(self, Xq):
        """Posterior mean and noise-free variance at the rows of Xq."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = rbf_gram(Xq, self.X, self.kernel)
        mean = Ks @ self.weights
        v = solve_triangular(self.chol, Ks.T, lower=True)
        var = self.kernel.alpha - np.einsum("ij,ij->j", v, v)
        if np.any(var < -VAR_CLAMP):
            raise NumericalFailureError(f"negative posterior variance {var.min():.3g}")
        return mean, np.maximum(var, 0.0)

    def mean_derivatives(self, f):
        """Value, gradient and Hessian of the posterior mean at a single input."""
        f = np.asarray(f, dtype=float).ravel()
        diff = f - self.X
        k = self.kernel.alpha * np.exp(-(diff * diff).sum(axis=1) / (2.0 * self.kernel.beta))
        ak = self.weights * k
        beta = self.kernel.beta
        value = float(ak.sum())
        grad = -(ak @ diff) / beta
        hess = (diff.T * ak) @ diff / beta**2 - value * np.eye(f.size) / beta
        return value, grad, hess


@dataclass(frozen=True)
class PadGpModel:
    """Stage-one model: three per-dimension GPs on latent vectors.

    ``dbn`` may be ``None``, in which case the kernel acts on min-max scaled raw
    features (the plain-RBF baseline) using ``scaler``.
    """

    dbn: DbnParams | None
    latent_train: np.ndarray
    labels: np.ndarray
    kernels: tuple
    scaler: MinMaxScaler | None = None
    gps: tuple = field(default=(), repr=False, compare=False)

    def latent(self, E) -> np.ndarray:
        E = np.atleast_2d(np.asarray(E, dtype=float))
        if E.shape[1] != self.n_features:
            raise InvalidInputError(f"features have length {E.shape[1]}, model expects {self.n_features}")
        return _latent(self.dbn, self.scaler, E)

    @property
    def n_features(self) -> int:
        if self.dbn is not None:
            return self.dbn.architecture[0]
        return self.latent_train.shape[1]


def _latent(dbn, scaler, E):
    if dbn is not None:
        return forward(dbn, E)
    return scaler.transform(E) if scaler is not None else E


def _check_labels(F) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[1] != 3:
        raise InvalidInputError(f"PAD labels need 3 columns, got {F.shape[1]}")
    if np.any(F < 1) or np.any(F > 9) or not np.all(np.isfinite(F)):
        raise InvalidInputError("PAD labels must lie in [1, 9]")
    return F


def fit_pad_gp(dbn: DbnParams | None, E, F, kernels, scaler: MinMaxScaler | None = None) -> PadGpModel:
    """Condition the three PAD GPs on a labeled set ``(E, F)`` (rows are samples)."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    F = _check_labels(F)
    kernels = tuple(kernels)
    if len(kernels) != 3:
        raise InvalidInputError("need one kernel per PAD dimension")
    if E.shape[0] != F.shape[0] or E.shape[0] < 1:
        raise InvalidInputError(f"features and labels disagree in row count: {E.shape[0]} vs {F.shape[0]}")
    latent = _latent(dbn, scaler, E)
    gps = tuple(ExactGp(latent, F[:, ell], kp) for ell, kp in enumerate(kernels))
    return PadGpModel(dbn, latent, F, kernels, scaler, gps)


def pad_posterior_batch(model: PadGpModel, E):
    """Posterior means and variances for every row of E, each of shape (m, 3)."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if E.shape[1] != model.n_features:
        raise InvalidInputError(f"features have length {E.shape[1]}, model expects {model.n_features}")
    if E.shape[0] == 0:
        return np.empty((0, 3)), np.empty((0, 3))
    latent = model.latent(E)
    out = [gp.predict(latent) for gp in model.gps]
    return np.column_stack([m for m, _ in out]), np.column_stack([v for _, v in out])


def pad_posterior(model: PadGpModel, e) -> PadPosterior:
    values = np.asarray(getattr(e, "values", e), dtype=float)
    if values.ndim != 1:
        raise InvalidInputError("pad_posterior takes a single feature vector")
    mean, var = pad_posterior_batch(model, values[None, :])
    return PadPosterior(mean[0], var[0])


# ---- stage two ----

@dataclass(frozen=True)
class GridSearchResult:
    alphas: np.ndarray
    betas: np.ndarray
    cv_mse: np.ndarray  # (len(alphas), len(betas))
    best_index: tuple


@dataclass(frozen=True)
class PerfGpModel:
    pad_train: np.ndarray
    q_train: np.ndarray
    kernel: KernelParams
    gp: ExactGp | None = field(default=None, repr=False, compare=False)
    search: GridSearchResult | None = field(default=None, repr=False, compare=False)


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    """Centres of ``n`` equal cells on a log scale spanning (lo, hi); all strictly interior."""
    edges = np.exp(np.linspace(np.log(lo), np.log(hi), 2 * n + 1))
    return edges[1::2]


def log_grid_edges(lo: float, hi: float, n: int) -> np.ndarray:
    return np.exp(np.linspace(np.log(lo), np.log(hi), n + 1))


def cv_folds(m: int, n_folds: int, n_repeats: int, seed: int) -> list:
    """``(train_idx, test_idx)`` pairs for repeated shuffled k-fold CV."""
    rng = np.random.default_rng(seed)
    folds = []
    for _ in range(n_repeats):
        perm = rng.permutation(m)
        for test in np.array_split(perm, n_folds):
            folds.append((np.setdiff1d(perm, test), np.sort(test)))
    return folds


def cv_mse(X, y, kernel: KernelParams, folds) -> float:
    """Mean held-out squared error of the GP mean, pooled over all folds."""
    sq = []
    for train, test in folds:
        gp = ExactGp(X[train], y[train], kernel)
        mean, _ = gp.predict(X[test])
        sq.append((mean - y[test]) ** 2)
    return float(np.mean(np.concatenate(sq)))


def fit_perf_gp(pad_means, q, noise_var: float = 0.01, n_grid: int = 10, n_folds: int = 5,
                n_repeats: int = 3, seed: int = 0,
                alpha_range=ALPHA_RANGE, beta_range=BETA_RANGE) -> PerfGpModel:
    """Grid-search (alpha, beta) by repeated k-fold CV, then refit on all rows.

    Ties in CV error go to the lowest flat grid index (alpha-major).
    """
    X = np.atleast_2d(np.asarray(pad_means, dtype=float))
    y = np.asarray(q, dtype=float).ravel()
    if X.shape[1] != 3 or X.shape[0] != y.size:
        raise InvalidInputError(f"need (m, 3) PAD means and m targets, got {X.shape} and {y.size}")
    if y.size < n_folds:
        raise InvalidInputError(f"need at least {n_folds} rows for {n_folds}-fold CV, got {y.size}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise InvalidInputError("performance targets must be finite and positive")
    alphas = log_grid(*alpha_range, n_grid)
    betas = log_grid(*beta_range, n_grid)
    folds = cv_folds(y.size, n_folds, n_repeats, seed)
    scores = np.array([[cv_mse(X, y, KernelParams(a, b, noise_var), folds) for b in betas] for a in alphas])
    best = np.unravel_index(int(np.argmin(scores)), scores.shape)
    kernel = KernelParams(alphas[best[0]], betas[best[1]], noise_var)
    search = GridSearchResult(alphas, betas, scores, (int(best[0]), int(best[1])))
    return PerfGpModel(X, y, kernel, ExactGp(X, y, kernel), search)


def perf_gp_from_kernel(pad_means, q, kernel: KernelParams) -> PerfGpModel:
    X = np.atleast_2d(np.asarray(pad_means, dtype=float))
    y = np.asarray(q, dtype=float).ravel()
    return PerfGpModel(X, y, kernel, ExactGp(X, y, kernel))


def _sigma_points(mean, var, kappa: float = 0.0):
    n = mean.size
    lam = n + kappa
    pts = [mean]
    w = [kappa / lam]
    for i in range(n):
        step = np.zeros(n)
        step[i] = np.sqrt(lam * var[i])
        pts += [mean + step, mean - step]
        w += [1.0 / (2 * lam)] * 2
    return np.array(pts), np.array(w)


def qot_posterior(model: PerfGpModel, pad: PadPosterior, mode: str = "plugin") -> QotPosterior:
    """Performance posterior at a PAD belief.

    ``"plugin"`` evaluates the GP at the PAD mean.  ``"unscented"`` is an
    extension that propagates PAD variance through the GP mean with sigma
    points (kappa = 0) and adds the spread to the averaged GP variance.
    """
    if mode == "plugin":
        mean, var = model.gp.predict(pad.mean[None, :])
        return QotPosterior(mean[0], var[0])
    if mode == "unscented":
        pts, w = _sigma_points(pad.mean, pad.var)
        means, vars_ = model.gp.predict(pts)
        mu = float(w @ means)
        spread = float(w @ (means - mu) ** 2)
        return QotPosterior(mu, max(float(w @ vars_), 0.0) + spread)
    raise InvalidInputError(f"unknown propagation mode {mode!r}")


def prob_q_at_least(post: QotPosterior, q_r: float) -> float:
    """``P{q >= q_r}`` under the Gaussian posterior; a point mass when var = 0."""
    if post.var == 0:
        return 1.0 if post.mean >= q_r else 0.0
    return float(norm.sf(q_r, loc=post.mean, scale=np.sqrt(post.var)))


# ---- Laplace composition ----

@dataclass(frozen=True)
class LinearGaussianLikelihood:
    """``q | f ~ N(w.f + c, var)``; a stand-in performance map with a closed-form marginal."""

    w: np.ndarray
    c: float
    var: float

    def mean_derivatives(self, f):
        w = np.asarray(self.w, dtype=float)
        return float(w @ f + self.c), w.copy(), np.zeros((w.size, w.size))

    def variance_at(self, f) -> float:
        return float(self.var)


def _likelihood_parts(model):
    """Adapt a PerfGpModel or LinearGaussianLikelihood to (mean_derivatives, variance)."""
    if isinstance(model, PerfGpModel):
        def variance(f):
            return float(model.gp.predict(np.asarray(f)[None, :])[1][0]) + model.kernel.noise_var
        return model.gp.mean_derivatives, variance
    return model.mean_derivatives, model.variance_at


def laplace_marginal(q: float, pad: PadPosterior, model, method: str = "laplace",
                     max_iter: int = 100, tol: float = 1e-12) -> float:
    """Approximate ``p(q | e) = integral p(q | f) p(f | e) df``.

    The likelihood is ``N(q; m(f), v)`` with ``m`` the performance-GP mean and
    ``v`` its predictive variance (noise included) frozen at the PAD mean.

    ``method="laplace"`` expands the log integrand to second order about its
    mode, found by Newton iteration in whitened coordinates
    ``z = diag(var)^(-1/2) (f - mean)``; dimensions with zero variance are held
    at the mean.  For a likelihood mean linear in ``f`` this is exact.

    ``method="plugin"`` is the cancellation form ``p(q | f_hat) p(f_hat | e)
    (2 pi)^(3/2) |Sigma|^(1/2)`` evaluated at ``f_hat = mean``, which reduces to
    ``N(q; m(mean), v)``.  With any zero variance the reduced form is returned
    directly.
    """
    mean_fn, var_fn = _likelihood_parts(model)
    mu = pad.mean
    v = var_fn(mu)
    if not v > 0:
        raise NumericalFailureError("likelihood variance must be positive")
    if method == "plugin":
        m0 = mean_fn(mu)[0]
        lik = norm.pdf(q, m0, np.sqrt(v))
        if np.any(pad.var == 0):
            return float(lik)
        prior_at_mode = np.prod(norm.pdf(mu, mu, np.sqrt(pad.var)))
        return float(lik * prior_at_mode * (2 * np.pi) ** 1.5 * np.sqrt(np.prod(pad.var)))
    if method != "laplace":
        raise InvalidInputError(f"unknown Laplace method {method!r}")

    active = pad.var > 0
    s = np.sqrt(pad.var[active])

    def expand(z):
        f = mu.copy()
        f[active] = mu[active] + s * z
        m, g, H = mean_fn(f)
        r = q - m
        gz = s * g[active]
        Hz = s[:, None] * H[np.ix_(active, active)] * s[None, :]
        psi = -0.5 * r * r / v - 0.5 * z @ z
        grad = r * gz / v - z
        hess_gn = -np.outer(gz, gz) / v - np.eye(z.size)
        hess = hess_gn + r * Hz / v
        return psi, grad, hess, hess_gn, m

    z = np.zeros(int(active.sum()))
    if z.size == 0:
        return float(norm.pdf(q, mean_fn(mu)[0], np.sqrt(v)))
    psi, grad, hess, hess_gn, _ = expand(z)
    for _ in range(max_iter):
        # Newton when the Hessian is negative definite, Gauss-Newton otherwise
        H = hess if np.all(np.linalg.eigvalsh(hess) < 0) else hess_gn
        step = -np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = expand(z + t * step)
            if cand[0] >= psi - 1e-15 or t < 1e-10:
                break
            t *= 0.5
        z = z + t * step
        psi, grad, hess, hess_gn, _ = cand
        if np.max(np.abs(t * step)) < tol:
            break
    H = hess if np.all(np.linalg.eigvalsh(hess) < 0) else hess_gn
    _, logdet = np.linalg.slogdet(-H)
    return float(np.exp(psi - 0.5 * logdet) / np.sqrt(2 * np.pi * v))


def linear_gaussian_marginal(q: float, pad: PadPosterior, lik: LinearGaussianLikelihood) -> float:
    """Closed-form ``N(q; w.mu + c, var + w' Sigma w)``."""
    w = np.asarray(lik.w, dtype=float)
    return float(norm.pdf(q, w @ pad.mean + lik.c, np.sqrt(lik.var + w @ (pad.var * w))))

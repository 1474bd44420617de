"""Deep belief network feature map for the PAD kernel.

A stack of binary RBMs is pretrained greedily with single-step contrastive
divergence, then the whole stack and the three kernel hyperparameter pairs
are fine-tuned by backpropagating the leave-one-out GP prediction error.

Features enter the network min-max scaled to [0, 1] with statistics frozen at
pretraining time; the scaler travels with the network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import expit

from .errors import InvalidInputError
from .kernels import KernelParams, rbf_gram, sq_dists, stable_cholesky


@dataclass(frozen=True)
class TrainConfig:
    lr_first_layer: float = 0.01
    lr_upper_layers: float = 0.001
    weight_decay: float = 0.0002
    momentum: float = 0.1
    epochs: int = 500
    minibatch_size: int = 10
    seed: int = 0
    finetune_lr_start: float = 1e-1
    finetune_lr_end: float = 1e-5
    finetune_epochs: int = 300
    patience: int = 20
    validation_fraction: float = 0.2
    init_std: float = 0.01
    grad_clip: float | None = 1.0

    def __post_init__(self):
        for name in ("lr_first_layer", "lr_upper_layers", "finetune_lr_start", "finetune_lr_end", "init_std"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.weight_decay < 0 or not (0 <= self.momentum < 1):
            raise InvalidInputError("weight_decay must be >= 0 and momentum in [0, 1)")
        if self.finetune_lr_start < self.finetune_lr_end:
            raise InvalidInputError("finetune_lr_start must be >= finetune_lr_end")
        if self.epochs < 0 or self.finetune_epochs < 0 or self.minibatch_size < 1 or self.patience < 1:
            raise InvalidInputError("epoch counts must be >= 0, minibatch_size and patience >= 1")
        if not (0 <= self.validation_fraction < 1):
            raise InvalidInputError("validation_fraction must be in [0, 1)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise InvalidInputError("grad_clip must be positive or None")


@dataclass(frozen=True)
class MinMaxScaler:
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def fit(cls, X) -> "MinMaxScaler":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        span = self.upper - self.lower
        # constant columns map to 0
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, np.clip((X - self.lower) / safe, 0.0, 1.0), 0.0)


@dataclass(frozen=True)
class RbmLayer:
    weights: np.ndarray  # visible x hidden
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        b = np.array(self.visible_bias, dtype=float).ravel()
        c = np.array(self.hidden_bias, dtype=float).ravel()
        if W.ndim != 2 or W.shape != (b.size, c.size):
            raise InvalidInputError(f"RBM shapes inconsistent: W{W.shape}, b({b.size}), c({c.size})")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise InvalidInputError("RBM parameters must be finite")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "visible_bias", b)
        object.__setattr__(self, "hidden_bias", c)

    @property
    def n_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]

    def hidden_probs(self, v):
        return expit(v @ self.weights + self.hidden_bias)

    def visible_probs(self, h):
        return expit(h @ self.weights.T + self.visible_bias)

    def free_energy(self, v) -> np.ndarray:
        """``F(v) = -v.b - sum_j log(1 + exp(c_j + v.W[:, j]))`` per row."""
        v = np.atleast_2d(v)
        return -v @ self.visible_bias - np.logaddexp(0.0, v @ self.weights + self.hidden_bias).sum(axis=1)


@dataclass(frozen=True)
class DbnParams:
    layers: tuple
    scaler: MinMaxScaler | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) < 1:
            raise InvalidInputError("a DBN needs at least one layer")
        for lo, hi in zip(layers, layers[1:]):
            if lo.n_hidden != hi.n_visible:
                raise InvalidInputError(f"layer widths do not chain: {lo.n_hidden} -> {hi.n_visible}")
        if self.scaler is not None and self.scaler.lower.size != layers[0].n_visible:
            raise InvalidInputError("scaler width does not match the input layer")
        object.__setattr__(self, "layers", layers)

    @property
    def architecture(self) -> tuple:
        return (self.layers[0].n_visible,) + tuple(layer.n_hidden for layer in self.layers)


def init_layer(n_visible: int, n_hidden: int, rng: np.random.Generator, std: float = 0.01) -> RbmLayer:
    return RbmLayer(rng.normal(0.0, std, size=(n_visible, n_hidden)), np.zeros(n_visible), np.zeros(n_hidden))


def cd1_statistics(layer: RbmLayer, v0: np.ndarray, rng: np.random.Generator) -> dict:
    """Batch-averaged positive- and negative-phase statistics of one CD-1 step.

    The positive phase uses hidden probabilities given the data; the negative
    phase reconstructs visible probabilities from a binary hidden sample and
    re-infers hidden probabilities from them.
    """
    v0 = np.atleast_2d(v0)
    n = v0.shape[0]
    h0 = layer.hidden_probs(v0)
    h0_sample = (rng.random(h0.shape) < h0).astype(float)
    v1 = layer.visible_probs(h0_sample)
    h1 = layer.hidden_probs(v1)
    return {
        "pos_vh": v0.T @ h0 / n,
        "neg_vh": v1.T @ h1 / n,
        "pos_v": v0.mean(axis=0),
        "neg_v": v1.mean(axis=0),
        "pos_h": h0.mean(axis=0),
        "neg_h": h1.mean(axis=0),
        "reconstruction": v1,
    }


def rbm_cd1_update(layer: RbmLayer, minibatch, cfg: TrainConfig, rng: np.random.Generator,
                   lr: float | None = None, velocity=None):
    """One CD-1 step with momentum and L2 weight decay.

    Returns ``(new_layer, new_velocity)``; pass the velocity back in on the next
    call to carry momentum.
    """
    v0 = np.atleast_2d(np.asarray(minibatch, dtype=float))
    if v0.shape[1] != layer.n_visible:
        raise InvalidInputError(f"minibatch has {v0.shape[1]} columns, layer expects {layer.n_visible}")
    if lr is None:
        lr = cfg.lr_first_layer
    stats = cd1_statistics(layer, v0, rng)
    grad_w = stats["pos_vh"] - stats["neg_vh"] - cfg.weight_decay * layer.weights
    grad_b = stats["pos_v"] - stats["neg_v"]
    grad_c = stats["pos_h"] - stats["neg_h"]
    if velocity is None:
        velocity = (np.zeros_like(grad_w), np.zeros_like(grad_b), np.zeros_like(grad_c))
    vw, vb, vc = velocity
    vw = cfg.momentum * vw + lr * grad_w
    vb = cfg.momentum * vb + lr * grad_b
    vc = cfg.momentum * vc + lr * grad_c
    new = RbmLayer(layer.weights + vw, layer.visible_bias + vb, layer.hidden_bias + vc)
    return new, (vw, vb, vc)


def reconstruction_error(layer: RbmLayer, data) -> float:
    """Mean squared error of a deterministic up-down pass."""
    data = np.atleast_2d(data)
    recon = layer.visible_probs(layer.hidden_probs(data))
    return float(np.mean((data - recon) ** 2))


def train_rbm(layer: RbmLayer, data: np.ndarray, cfg: TrainConfig, rng: np.random.Generator,
              lr: float, epochs: int | None = None) -> RbmLayer:
    epochs = cfg.epochs if epochs is None else epochs
    velocity = None
    n = data.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            batch = data[order[start:start + cfg.minibatch_size]]
            layer, velocity = rbm_cd1_update(layer, batch, cfg, rng, lr=lr, velocity=velocity)
    return layer


def pretrain_dbn(dataset, architecture, cfg: TrainConfig) -> DbnParams:
    """Greedy layer-wise CD-1 pretraining on raw (unscaled) feature rows.

    Layer k is trained on the hidden probabilities of layer k-1.  The first
    layer uses ``lr_first_layer``; the rest use ``lr_upper_layers``.
    """
    X = np.atleast_2d(np.asarray(dataset, dtype=float))
    architecture = tuple(int(a) for a in architecture)
    if X.shape[0] == 0 or X.size == 0:
        raise InvalidInputError("pretraining dataset is empty")
    if len(architecture) < 2:
        raise InvalidInputError("architecture needs an input width and at least one hidden width")
    if X.shape[1] != architecture[0]:
        raise InvalidInputError(f"dataset has {X.shape[1]} features, architecture expects {architecture[0]}")
    rng = np.random.default_rng(cfg.seed)
    scaler = MinMaxScaler.fit(X)
    data = scaler.transform(X)
    layers = []
    for k, (n_vis, n_hid) in enumerate(zip(architecture, architecture[1:])):
        layer = init_layer(n_vis, n_hid, rng, cfg.init_std)
        lr = cfg.lr_first_layer if k == 0 else cfg.lr_upper_layers
        layer = train_rbm(layer, data, cfg, rng, lr)
        layers.append(layer)
        data = layer.hidden_probs(data)
    return DbnParams(tuple(layers), scaler)


def _activations(dbn: DbnParams, E) -> list[np.ndarray]:
    x = np.atleast_2d(np.asarray(E, dtype=float))
    if x.shape[1] != dbn.layers[0].n_visible:
        raise InvalidInputError(f"input has {x.shape[1]} features, network expects {dbn.layers[0].n_visible}")
    if dbn.scaler is not None:
        x = dbn.scaler.transform(x)
    acts = [x]
    for layer in dbn.layers:
        acts.append(layer.hidden_probs(acts[-1]))
    return acts


def forward(dbn: DbnParams, e) -> np.ndarray:
    """Deterministic mean-field pass; accepts one feature vector or a matrix of rows."""
    values = getattr(e, "values", e)
    single = np.ndim(values) == 1
    out = _activations(dbn, values)[-1]
    return out[0] if single else out


def free_energy_ratio(dbn: DbnParams, train_set, validation_set) -> float:
    """Mean top-layer free energy of the training rows over that of the validation rows."""
    train_set = np.atleast_2d(np.asarray(train_set, dtype=float))
    validation_set = np.atleast_2d(np.asarray(validation_set, dtype=float))
    if train_set.shape[0] == 0 or validation_set.shape[0] == 0 or train_set.size == 0 or validation_set.size == 0:
        raise InvalidInputError("free-energy sets must be non-empty")
    top = dbn.layers[-1]
    v_train = _activations(dbn, train_set)[-2]
    v_val = _activations(dbn, validation_set)[-2]
    return float(top.free_energy(v_train).mean() / top.free_energy(v_val).mean())


# ---- supervised fine-tuning ----

def _loo_residuals_and_kgrad(phi, y, kp: KernelParams, scale: float):
    """LOO residuals for one output and dLoss/dK (loss = scale * sum r_i^2)."""
    D = sq_dists(phi, phi)
    Kf = kp.alpha * np.exp(-D / (2.0 * kp.beta))
    K = Kf + kp.noise_var * np.eye(len(y))
    L, _ = stable_cholesky(K)
    A = cho_solve((L, True), np.eye(len(y)))
    a = A @ y
    c = np.diag(A)
    r = a / c
    g = 2.0 * scale * r / c
    h = 2.0 * scale * r * r / c
    G = -np.outer(A @ g, a) + (A * h) @ A
    G = 0.5 * (G + G.T)
    return r, G, Kf, D


def loo_loss_and_grad(dbn: DbnParams, kernels, E, F):
    """Mean leave-one-out squared error of the three PAD GPs and its gradient.

    Loss is averaged over samples and PAD dimensions.  The gradient covers every
    layer's weights and hidden biases plus ``log alpha`` and ``log beta`` for each
    output kernel; noise variances are held fixed.

    Returns
    -------
    loss : float
    grads : dict with ``weights`` (list), ``hidden_bias`` (list), ``log_alpha`` (3,), ``log_beta`` (3,)
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    acts = _activations(dbn, E)
    phi = acts[-1]
    m = phi.shape[0]
    if F.shape != (m, len(kernels)):
        raise InvalidInputError(f"labels must have shape ({m}, {len(kernels)}), got {F.shape}")
    scale = 1.0 / (m * len(kernels))
    loss = 0.0
    d_phi = np.zeros_like(phi)
    d_log_alpha = np.zeros(len(kernels))
    d_log_beta = np.zeros(len(kernels))
    for ell, kp in enumerate(kernels):
        r, G, Kf, D = _loo_residuals_and_kgrad(phi, F[:, ell], kp, scale)
        loss += scale * float(r @ r)
        M = G * Kf
        d_log_alpha[ell] = M.sum()
        d_log_beta[ell] = (M * D).sum() / (2.0 * kp.beta)
        d_phi += -(2.0 / kp.beta) * (M.sum(axis=1)[:, None] * phi - M @ phi)
    d_w, d_c = [], []
    delta = d_phi
    for k in range(len(dbn.layers) - 1, -1, -1):
        h = acts[k + 1]
        dz = delta * h * (1.0 - h)
        d_w.append(acts[k].T @ dz)
        d_c.append(dz.sum(axis=0))
        delta = dz @ dbn.layers[k].weights.T
    d_w.reverse()
    d_c.reverse()
    return loss, {"weights": d_w, "hidden_bias": d_c, "log_alpha": d_log_alpha, "log_beta": d_log_beta}


def gp_predict_mean(phi_train, y, phi_query, kp: KernelParams) -> np.ndarray:
    K = rbf_gram(phi_train, phi_train, kp) + kp.noise_var * np.eye(len(y))
    L, _ = stable_cholesky(K)
    return rbf_gram(phi_query, phi_train, kp) @ cho_solve((L, True), y)


def prediction_mse(dbn: DbnParams, kernels, E_train, F_train, E_query, F_query) -> float:
    """MSE (averaged over rows and PAD dimensions) of GP means trained on one set and queried on another."""
    phi_t = forward(dbn, np.atleast_2d(E_train))
    phi_q = forward(dbn, np.atleast_2d(E_query))
    F_train = np.atleast_2d(F_train)
    F_query = np.atleast_2d(F_query)
    err = [gp_predict_mean(phi_t, F_train[:, ell], phi_q, kp) - F_query[:, ell] for ell, kp in enumerate(kernels)]
    return float(np.mean(np.square(err)))


def _apply_step(dbn, kernels, step):
    layers = tuple(
        RbmLayer(layer.weights - dw, layer.visible_bias, layer.hidden_bias - dc)
        for layer, dw, dc in zip(dbn.layers, step["weights"], step["hidden_bias"])
    )
    new_kernels = [
        KernelParams(kp.alpha * np.exp(-da), kp.beta * np.exp(-db), kp.noise_var)
        for kp, da, db in zip(kernels, step["log_alpha"], step["log_beta"])
    ]
    return DbnParams(layers, dbn.scaler), new_kernels


def _grad_norm(grads) -> float:
    total = 0.0
    for v in grads.values():
        for x in v if isinstance(v, list) else [v]:
            total += float(np.sum(np.square(x)))
    return float(np.sqrt(total))


@dataclass
class FineTuneHistory:
    train_loss: list = field(default_factory=list)
    validation_loss: list = field(default_factory=list)
    best_epoch: int = 0


def fine_tune(dbn: DbnParams, kernels, E, F, cfg: TrainConfig, validation=None,
              epochs: int | None = None, history: FineTuneHistory | None = None):
    """Jointly fit network weights and kernel hyperparameters to labeled data.

    Full-batch gradient descent with momentum on :func:`loo_loss_and_grad`; the
    learning rate is annealed linearly from ``finetune_lr_start`` to
    ``finetune_lr_end``.  When a ``(E_val, F_val)`` pair is given, the returned
    parameters are those with the lowest validation MSE and training stops after
    ``cfg.patience`` epochs without improvement; otherwise the lowest training
    loss wins.  With ``cfg.grad_clip`` set, the gradient (weight decay
    included) is rescaled to at most that global norm before each step.

    Returns
    -------
    (DbnParams, list[KernelParams])
    """
    kernels = list(kernels)
    for kp in kernels:
        if not (kp.alpha > 0 and kp.beta > 0):
            raise InvalidInputError("kernel hyperparameters must be positive")
    E = np.atleast_2d(np.asarray(E, dtype=float))
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if E.shape[0] == 0:
        raise InvalidInputError("labeled set is empty")
    epochs = cfg.finetune_epochs if epochs is None else int(epochs)
    if epochs == 0:
        return dbn, kernels
    history = history if history is not None else FineTuneHistory()

    def score(d, ks):
        if validation is None:
            return loo_loss_and_grad(d, ks, E, F)[0]
        return prediction_mse(d, ks, E, F, validation[0], validation[1])

    best = (score(dbn, kernels), dbn, kernels, 0)
    velocity = None
    stale = 0
    for epoch in range(epochs):
        frac = epoch / max(epochs - 1, 1)
        lr = cfg.finetune_lr_start + (cfg.finetune_lr_end - cfg.finetune_lr_start) * frac
        loss, grads = loo_loss_and_grad(dbn, kernels, E, F)
        history.train_loss.append(loss)
        grads["weights"] = [g + cfg.weight_decay * layer.weights for g, layer in zip(grads["weights"], dbn.layers)]
        if cfg.grad_clip is not None:
            norm = _grad_norm(grads)
            if norm > cfg.grad_clip:
                grads = {k: [x * (cfg.grad_clip / norm) for x in v] if isinstance(v, list) else v * (cfg.grad_clip / norm)
                         for k, v in grads.items()}
        if velocity is None:
            velocity = {k: [np.zeros_like(x) for x in v] if isinstance(v, list) else np.zeros_like(v)
                        for k, v in grads.items()}
        step = {}
        for key, g in grads.items():
            if isinstance(g, list):
                velocity[key] = [cfg.momentum * v + lr * gi for v, gi in zip(velocity[key], g)]
            else:
                velocity[key] = cfg.momentum * velocity[key] + lr * g
            step[key] = velocity[key]
        dbn, kernels = _apply_step(dbn, kernels, step)
        current = score(dbn, kernels)
        if validation is not None:
            history.validation_loss.append(current)
        if current < best[0]:
            best = (current, dbn, kernels, epoch + 1)
            stale = 0
        else:
            stale += 1
            if validation is not None and stale >= cfg.patience:
                break
    history.best_epoch = best[3]
    return best[1], best[2]

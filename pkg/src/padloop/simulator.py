"""Synthetic operator: PAD dynamics, tracking performance and EEG.

The operator relaxes toward a fatigue-depressed PAD baseline and responds to
delivered stimuli with a saturating push along (rating - neutral).  Tracking
errors grow with low PAD, fatigue and low skill.  EEG is synthesized per
channel and wavelet band by spectral shaping: the in-band power-law exponent
is an affine function of PAD, so band-wise fractal dimension carries the
emotional state while per-window band powers vary as nuisance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .controller import NULL_STIMULUS, ControllerConfig, FuzzyController, controller_step
from .errors import InvalidInputError, PadloopError
from .features import BANDS, CHANNELS, SAMPLE_RATE, WINDOW_SAMPLES, EegWindow, FeatureMode, extract_features
from .gp import PadGpModel, PerfGpModel, pad_posterior, qot_posterior

PAD_MIN, PAD_MAX = 1.0, 9.0

# DWT-aligned synthesis bands; delta is a nuisance that the band features never see
SYNTH_BANDS = {"delta": (1.0, 4.0), "theta": (4.0, 8.0), "alpha": (8.0, 16.0), "beta": (16.0, 32.0), "gamma": (32.0, 64.0)}

_LEFT_ANTERIOR = ("AF3", "F7", "F3", "FC5", "T7")
_RIGHT_ANTERIOR = ("AF4", "F8", "F4", "FC6", "T8")
_POSTERIOR = ("P7", "P8", "O1", "O2")
_AROUSAL_SITES = ("T7", "T8", "P7", "P8", "O1", "O2")


def default_pad_weights() -> np.ndarray:
    """Roughness shift per unit of scaled PAD, shape (channel, band, pad-dim).

    Signs follow the reported correlation pattern: valence raises roughness on
    the left anterior sites and lowers it on the right and posterior sites;
    arousal raises alpha, beta and gamma roughness over temporal, parietal and
    occipital sites; dominance lowers it everywhere.
    """
    W = np.zeros((len(CHANNELS), len(BANDS), 3))
    for c, ch in enumerate(CHANNELS):
        for b, band in enumerate(BANDS):
            fast = band != "theta"
            if ch in _LEFT_ANTERIOR:
                W[c, b, 0] = 0.25 if fast else 0.10
            elif ch in _RIGHT_ANTERIOR:
                W[c, b, 0] = -0.25 if fast else -0.10
            else:
                W[c, b, 0] = -0.15
            if ch in _AROUSAL_SITES and fast:
                W[c, b, 1] = 0.30
            W[c, b, 2] = -0.12
    return W


@dataclass(frozen=True)
class EegSynthParams:
    amplitude_uv: float = 10.0
    band_power: tuple = (1.0, 1.0, 1.2, 0.5, 0.2)  # delta..gamma
    power_jitter: float = 0.3  # lognormal sd of per-window band power
    roughness_jitter: float = 0.03
    spectral_gain: float = 16.0  # exponent change per unit roughness
    common_mode: float = 0.5
    sensor_noise: float = 0.02
    pad_weights: np.ndarray = field(default_factory=default_pad_weights, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pad_weights"] = np.asarray(self.pad_weights).tolist()
        d["band_power"] = list(self.band_power)
        return d


@dataclass(frozen=True)
class OperatorParams:
    rest_pad: tuple = (5.5, 5.5, 5.5)
    fatigue_drop: tuple = (2.0, 2.0, 2.0)
    relax_rate: float = 0.1
    action_gain: float = 0.25
    action_saturation: float = 3.0
    pad_noise: float = 0.15
    fatigue_rate: float = 0.015
    skill_rate: float = 0.02
    deficit_weights: tuple = (0.55, 0.35, 0.10)  # PAD, fatigue, lack of skill
    p1_base: float = 0.5
    p1_slope: float = 5.0
    p2_base: float = 0.5
    p2_slope: float = 7.0
    trial_noise: float = 0.15
    q_cap: float = 100.0

    def __post_init__(self):
        if not (0 < self.relax_rate < 1):
            raise InvalidInputError("relax_rate must lie in (0, 1)")
        if self.action_gain <= 0 or self.action_saturation <= 0:
            raise InvalidInputError("action gain and saturation must be positive")
        if self.q_cap <= 0:
            raise InvalidInputError("q_cap must be positive")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class OperatorState:
    pad: np.ndarray
    fatigue: float = 0.0
    skill: float = 0.0
    k: int = 0

    def __post_init__(self):
        pad = np.array(self.pad, dtype=float).ravel()
        if pad.shape != (3,) or np.any(pad < PAD_MIN) or np.any(pad > PAD_MAX):
            raise InvalidInputError(f"PAD state must be a 3-vector in [1, 9], got {pad}")
        if not (0 <= self.fatigue <= 1 and 0 <= self.skill <= 1):
            raise InvalidInputError("fatigue and skill must lie in [0, 1]")
        object.__setattr__(self, "pad", pad)


@dataclass(frozen=True)
class QotSample:
    p1: float
    p2: float
    q: float


def qot(p1: float, p2: float, q_cap: float = 100.0) -> float:
    """``1 / (0.5 (p1 + p2))``, capped at ``q_cap`` for near-perfect tracking."""
    if p1 < 0 or p2 < 0:
        raise InvalidInputError(f"deviation measures must be non-negative, got p1={p1}, p2={p2}")
    total = p1 + p2
    if total < 2.0 / q_cap:
        return float(q_cap)
    return 2.0 / total


def baseline_pad(fatigue: float, params: OperatorParams) -> np.ndarray:
    return np.asarray(params.rest_pad) - np.asarray(params.fatigue_drop) * fatigue


def operator_step(state: OperatorState, action_pad, params: OperatorParams, rng: np.random.Generator,
                  noise: bool = True) -> OperatorState:
    """Advance one trial.

    ``action_pad`` is the differential stimulus push (rating minus neutral);
    zero means no stimulus.  Three normals are drawn per call whether or not
    ``noise`` is set, so paired runs stay aligned.
    """
    action = np.asarray(action_pad, dtype=float)
    eps = rng.standard_normal(3)
    fatigue = state.fatigue + params.fatigue_rate * (1.0 - state.fatigue)
    skill = state.skill + params.skill_rate * (1.0 - state.skill)
    s = params.action_saturation
    pad = (state.pad + params.relax_rate * (baseline_pad(fatigue, params) - state.pad)
           + params.action_gain * s * np.tanh(action / s))
    if noise:
        pad = pad + params.pad_noise * eps
    return OperatorState(np.clip(pad, PAD_MIN, PAD_MAX), fatigue, skill, state.k + 1)


def performance_deficit(state: OperatorState, params: OperatorParams) -> float:
    """Deficit in [0, 1]: 0 at PAD = 9 with no fatigue and full skill."""
    w_pad, w_fat, w_skill = params.deficit_weights
    pad_term = (PAD_MAX - state.pad.mean()) / (PAD_MAX - PAD_MIN)
    return (w_pad * pad_term + w_fat * state.fatigue + w_skill * (1.0 - state.skill)) / (w_pad + w_fat + w_skill)


def perform_trial(state: OperatorState, params: OperatorParams, rng: np.random.Generator,
                  noise: bool = True) -> QotSample:
    """Draw the deviation rate and peak deviation of one tracking trial.

    Both have means increasing in the deficit and multiplicative lognormal
    noise; two normals are drawn per call regardless of ``noise``.
    """
    d = performance_deficit(state, params)
    z = rng.standard_normal(2)
    mult = np.exp(params.trial_noise * z) if noise else np.ones(2)
    p1 = (params.p1_base + params.p1_slope * d) * mult[0]
    p2 = (params.p2_base + params.p2_slope * d) * mult[1]
    return QotSample(float(p1), float(p2), qot(p1, p2, params.q_cap))


_FREQS = np.fft.rfftfreq(WINDOW_SAMPLES, 1.0 / SAMPLE_RATE)
_BAND_MASKS = [(_FREQS >= lo) & (_FREQS < hi) for lo, hi in SYNTH_BANDS.values()]


def target_roughness(pad, params: EegSynthParams) -> np.ndarray:
    """Affine PAD -> roughness map, shape (channel, band), before jitter."""
    z = (np.asarray(pad, dtype=float) - 5.0) / 4.0
    return 1.5 + np.asarray(params.pad_weights) @ z


def synth_eeg(state: OperatorState, rng: np.random.Generator, params: EegSynthParams | None = None,
              window_id: str = "") -> EegWindow:
    """One 14 x 1280 window whose band-wise spectral slopes encode ``state.pad``.

    For every channel and band the complex spectrum is Gaussian with magnitude
    ``(f / f_lo)^(-gamma/2)``, ``gamma = gain * (1.5 - roughness)``, normalized to
    a jittered band power.  Delta uses a fixed 1/f^2 shape.  A common-mode
    signal and white sensor noise are added.
    """
    params = params or EegSynthParams()
    n_ch = len(CHANNELS)
    rough = target_roughness(state.pad, params) + params.roughness_jitter * rng.standard_normal((n_ch, len(BANDS)))
    rough = np.clip(rough, 1.0, 2.0)
    log_power = params.power_jitter * rng.standard_normal((n_ch, len(SYNTH_BANDS)))
    spec = np.zeros((n_ch, _FREQS.size), dtype=complex)
    for b, ((name, (lo, _)), mask) in enumerate(zip(SYNTH_BANDS.items(), _BAND_MASKS)):
        f = _FREQS[mask]
        if name == "delta":
            expo = np.full(n_ch, 2.0)
        else:
            expo = params.spectral_gain * (1.5 - rough[:, b - 1])
        shape = (f[None, :] / lo) ** (-expo[:, None] / 2.0)
        power = params.band_power[b] * np.exp(log_power[:, b])
        shape *= np.sqrt(power[:, None] / np.sum(shape**2, axis=1, keepdims=True))
        coef = rng.standard_normal((n_ch, f.size)) + 1j * rng.standard_normal((n_ch, f.size))
        spec[:, mask] = shape * coef / np.sqrt(2.0)
    x = np.fft.irfft(spec, WINDOW_SAMPLES, axis=1) * np.sqrt(WINDOW_SAMPLES)
    common = np.fft.irfft(_common_spectrum(rng), WINDOW_SAMPLES) * np.sqrt(WINDOW_SAMPLES)
    x = x + params.common_mode * common[None, :]
    x = x + params.sensor_noise * rng.standard_normal(x.shape)
    return EegWindow(params.amplitude_uv * x, window_id=window_id)


def _common_spectrum(rng: np.random.Generator) -> np.ndarray:
    f = _FREQS
    amp = np.zeros_like(f)
    amp[1:] = f[1:] ** -1.0
    amp *= np.sqrt(1.0 / np.sum(amp**2))
    return amp * (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)) / np.sqrt(2.0)


# ---- closed loop ----

@dataclass
class LoopTrace:
    """Per-step record of a closed-loop run; arrays are indexed by step."""

    features: list = field(default_factory=list)
    pad_mean: list = field(default_factory=list)
    pad_var: list = field(default_factory=list)
    q_mean: list = field(default_factory=list)
    q_var: list = field(default_factory=list)
    true_pad: list = field(default_factory=list)
    fatigue: list = field(default_factory=list)
    true_q: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    d_eps: list = field(default_factory=list)
    gate: list = field(default_factory=list)
    action_id: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    aborted: bool = False
    error: str = ""

    def __len__(self) -> int:
        return len(self.true_q)


def spawn_streams(seed: int) -> dict:
    """Independent generators for operator, trial and EEG noise from one seed."""
    ss = np.random.SeedSequence(int(seed))
    op, trial, eeg = ss.spawn(3)
    return {"operator": np.random.default_rng(op), "trial": np.random.default_rng(trial),
            "eeg": np.random.default_rng(eeg)}


def initial_state(params: OperatorParams) -> OperatorState:
    return OperatorState(np.asarray(params.rest_pad, dtype=float), 0.0, 0.0, 0)


def run_closed_loop(pad_model: PadGpModel, perf_model: PerfGpModel, controller: FuzzyController,
                    horizon: int, control_enabled: bool, seed: int,
                    operator: OperatorParams | None = None, eeg: EegSynthParams | None = None,
                    mode=FeatureMode.BANDS, qot_mode: str = "plugin") -> LoopTrace:
    """Simulate ``horizon`` trials of observe -> estimate -> control -> act.

    With control disabled the null stimulus is always delivered, but the error
    signals are still computed and recorded.  A failing step stops the run and
    returns the partial trace with ``aborted`` set.
    """
    if horizon < 1:
        raise InvalidInputError("horizon must be at least 1")
    operator = operator or OperatorParams()
    eeg = eeg or EegSynthParams()
    mode = FeatureMode(mode)
    rngs = spawn_streams(seed)
    state = initial_state(operator)
    cfg: ControllerConfig = controller.cfg
    f_r = np.asarray(cfg.f_r)
    trace = LoopTrace(metadata={"seed": int(seed), "horizon": int(horizon), "control_enabled": bool(control_enabled),
                                "mode": mode.value, "q_r": cfg.q_r, "beta_r": cfg.beta_r})
    prev_eps = None
    for k in range(horizon):
        try:
            window = synth_eeg(state, rngs["eeg"], eeg, window_id=f"step{k}")
            fv = extract_features(window, mode)
            pad_post = pad_posterior(pad_model, fv)
            q_post = qot_posterior(perf_model, pad_post, qot_mode)
            action, eps = controller_step(q_post, prev_eps, controller)
            d_eps = 0.0 if prev_eps is None else eps - prev_eps
            if not control_enabled:
                stim, k_r = NULL_STIMULUS, 0
            else:
                stim, k_r = action.stimulus_id, action.gate
            push = np.zeros(3) if stim == NULL_STIMULUS else controller.library.rating(stim) - f_r
            state = operator_step(state, push, operator, rngs["operator"])
            trial = perform_trial(state, operator, rngs["trial"])
        except PadloopError as exc:
            trace.aborted = True
            trace.error = f"step {k}: {exc}"
            break
        trace.features.append(fv.values)
        trace.pad_mean.append(pad_post.mean)
        trace.pad_var.append(pad_post.var)
        trace.q_mean.append(q_post.mean)
        trace.q_var.append(q_post.var)
        trace.true_pad.append(state.pad)
        trace.fatigue.append(state.fatigue)
        trace.true_q.append(trial.q)
        trace.eps.append(eps)
        trace.d_eps.append(d_eps)
        trace.gate.append(k_r)
        trace.action_id.append(stim)
        prev_eps = eps
    return trace

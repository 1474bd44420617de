"""EEG preprocessing and Higuchi fractal-dimension features.

The chain is common average reference, zero-phase band-pass, optional db4
wavelet band split, then one Higuchi FD per series.  Every function accepts
either an :class:`EegWindow` or a plain ``(..., n_times)`` array and works
along the last axis, so the same code serves single series and whole windows.
"""

from __future__ import annotations

import enum
import functools
import warnings
from dataclasses import dataclass, field

import numpy as np
import pywt
from scipy import signal as sps

from .errors import DegenerateInputError, InvalidInputError

CHANNELS = (
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1",
    "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
)
SAMPLE_RATE = 128.0
WINDOW_SECONDS = 10
WINDOW_SAMPLES = int(SAMPLE_RATE * WINDOW_SECONDS)

# band name -> DWT detail level at 128 Hz
BANDS = ("theta", "alpha", "beta", "gamma")
BAND_LEVELS = {"theta": 4, "alpha": 3, "beta": 2, "gamma": 1}

WAVELET = "db4"
DWT_MODE = "symmetric"
DWT_LEVELS = 4
DEFAULT_K_MAX = 8


class FeatureMode(str, enum.Enum):
    EEG = "EEG"
    BANDS = "BANDS"

    @property
    def n_features(self) -> int:
        return len(CHANNELS) * (1 if self is FeatureMode.EEG else len(BANDS))


def feature_names(mode) -> list[str]:
    """Column names in the fixed layout: channel-major, then theta..gamma."""
    mode = FeatureMode(mode)
    if mode is FeatureMode.EEG:
        return [f"fd_{ch}" for ch in CHANNELS]
    return [f"fd_{ch}_{band}" for ch in CHANNELS for band in BANDS]


@dataclass(frozen=True)
class EegWindow:
    """One 10 s block of 14-channel EEG at 128 Hz, channels x time, in microvolts."""

    samples: np.ndarray
    sample_rate: float = SAMPLE_RATE
    channel_labels: tuple = CHANNELS
    window_id: str = ""

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim != 2:
            raise InvalidInputError(f"samples must be 2-D (channels x time), got shape {x.shape}")
        if x.shape[0] != len(CHANNELS):
            raise InvalidInputError(f"expected {len(CHANNELS)} channels, got {x.shape[0]}")
        if float(self.sample_rate) != SAMPLE_RATE:
            raise InvalidInputError(f"sample_rate must be {SAMPLE_RATE:g} Hz")
        if x.shape[1] != WINDOW_SAMPLES:
            raise InvalidInputError(f"expected {WINDOW_SAMPLES} samples per channel, got {x.shape[1]}")
        if tuple(self.channel_labels) != CHANNELS:
            raise InvalidInputError(f"channel labels must be {CHANNELS}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("samples contain non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    mode: FeatureMode
    window_id: str = ""

    def __post_init__(self):
        mode = FeatureMode(self.mode)
        v = np.array(self.values, dtype=float).ravel()
        if v.size != mode.n_features:
            raise InvalidInputError(f"{mode.value} features need length {mode.n_features}, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mode", mode)


@dataclass(frozen=True)
class DwtCoeffs:
    """Four-level db4 decomposition of a series (or of every row of an array)."""

    a4: np.ndarray
    d4: np.ndarray
    d3: np.ndarray
    d2: np.ndarray
    d1: np.ndarray
    length: int = field(default=0)

    def detail(self, level: int) -> np.ndarray:
        return {1: self.d1, 2: self.d2, 3: self.d3, 4: self.d4}[level]

    def as_list(self) -> list[np.ndarray]:
        return [self.a4, self.d4, self.d3, self.d2, self.d1]


def _unwrap(x):
    if isinstance(x, EegWindow):
        return x.samples, x
    arr = np.asarray(x, dtype=float)
    return arr, None


def _rewrap(values, template):
    if template is None:
        return values
    return EegWindow(values, template.sample_rate, template.channel_labels, template.window_id)


def car_filter(window):
    """Subtract the cross-channel mean at every time index."""
    x, template = _unwrap(window)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("common average reference needs at least 2 channels")
    return _rewrap(x - x.mean(axis=0, keepdims=True), template)


@functools.lru_cache(maxsize=32)
def _bandpass_sos(low, high, fs, order=4):
    if not (0 < low < high < fs / 2):
        raise InvalidInputError(f"band edges must satisfy 0 < low < high < fs/2, got ({low}, {high}) at fs={fs}")
    sos = sps.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    sos.flags.writeable = False
    return sos


def bandpass(window, low: float = 1.0, high: float = 60.0, fs: float = SAMPLE_RATE):
    """Zero-phase Butterworth band-pass (order 4, applied forward and backward)."""
    x, template = _unwrap(window)
    if template is not None:
        fs = template.sample_rate
    sos = _bandpass_sos(low, high, fs).copy()
    return _rewrap(sps.sosfiltfilt(sos, x, axis=-1), template)


def dwt_decompose(series) -> DwtCoeffs:
    """Four-level db4 DWT with half-point symmetric extension, along the last axis.

    Detail levels at 128 Hz: D1 32-64 Hz, D2 16-32 Hz, D3 8-16 Hz, D4 4-8 Hz.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[-1] if x.ndim else 0
    if n < 16:
        raise InvalidInputError(f"series needs at least 16 samples for a 4-level DWT, got {n}")
    with warnings.catch_warnings():
        # short series trigger pywt's boundary-effect warning; reconstruction is still exact
        warnings.simplefilter("ignore", UserWarning)
        a4, d4, d3, d2, d1 = pywt.wavedec(x, WAVELET, mode=DWT_MODE, level=DWT_LEVELS, axis=-1)
    return DwtCoeffs(a4, d4, d3, d2, d1, length=n)


def _reconstruct(coeffs: DwtCoeffs, keep: int) -> np.ndarray:
    parts = coeffs.as_list()
    parts = [p if i == keep else np.zeros_like(p) for i, p in enumerate(parts)]
    out = pywt.waverec(parts, WAVELET, mode=DWT_MODE, axis=-1)
    return out[..., : coeffs.length]


def band_reconstruct(coeffs: DwtCoeffs, level: int) -> np.ndarray:
    """Inverse DWT of a single detail level with every other level zeroed."""
    if level not in (1, 2, 3, 4):
        raise InvalidInputError(f"detail level must be in 1..4, got {level}")
    return _reconstruct(coeffs, 5 - level)


def approximation_reconstruct(coeffs: DwtCoeffs) -> np.ndarray:
    """Inverse DWT of A4 alone (below 4 Hz; not used as a feature)."""
    return _reconstruct(coeffs, 0)


def _higuchi_rows(x: np.ndarray, k_max: int) -> np.ndarray:
    n = x.shape[-1]
    log_inv_k = -np.log(np.arange(1, k_max + 1, dtype=float))
    log_l = np.empty((x.shape[0], k_max))
    for k in range(1, k_max + 1):
        lengths = np.zeros(x.shape[0])
        for m in range(k):
            sub = x[:, m::k]
            n_inc = sub.shape[1] - 1
            curve = np.abs(np.diff(sub, axis=1)).sum(axis=1)
            lengths += curve * (n - 1) / (n_inc * k) / k
        lengths /= k
        if np.any(lengths <= 0):
            raise DegenerateInputError(f"curve length is zero at scale k={k}")
        log_l[:, k - 1] = np.log(lengths)
    xc = log_inv_k - log_inv_k.mean()
    slope = (log_l - log_l.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
    return np.clip(slope, 1.0, 2.0)


def higuchi_fd(series, k_max: int = DEFAULT_K_MAX):
    """Higuchi fractal dimension, clamped to [1, 2].

    The FD is the least-squares slope of ``log L(k)`` against ``log(1/k)``
    for ``k = 1..k_max``, where ``L(k)`` is Higuchi's normalized curve length
    averaged over the ``k`` offsets.

    Parameters
    ----------
    series : array_like, shape (n_times,) or (n_series, n_times)
    k_max : int
        Largest scale; the series needs at least ``2 * k_max`` samples.

    Returns
    -------
    float for 1-D input, otherwise ndarray of shape (n_series,)
    """
    x = np.asarray(series, dtype=float)
    k_max = int(k_max)
    if k_max < 2:
        raise InvalidInputError("k_max must be at least 2")
    if x.ndim not in (1, 2):
        raise InvalidInputError("series must be 1-D or 2-D")
    rows = np.atleast_2d(x)
    if rows.shape[1] < 2 * k_max:
        raise InvalidInputError(f"series length {rows.shape[1]} is shorter than 2*k_max={2 * k_max}")
    if not np.all(np.isfinite(rows)):
        raise InvalidInputError("series contains non-finite values")
    if np.any(np.ptp(rows, axis=1) == 0):
        raise DegenerateInputError("constant series has no fractal dimension")
    fd = _higuchi_rows(rows, k_max)
    return float(fd[0]) if x.ndim == 1 else fd


def split_bands(x: np.ndarray) -> np.ndarray:
    """Band series for every channel, shape (n_channels, 4, n_times) ordered theta..gamma."""
    coeffs = dwt_decompose(x)
    return np.stack([band_reconstruct(coeffs, BAND_LEVELS[b]) for b in BANDS], axis=1)


def extract_features(window: EegWindow, mode=FeatureMode.BANDS, k_max: int = DEFAULT_K_MAX) -> FeatureVector:
    """CAR -> 1-60 Hz band-pass -> (BANDS: db4 band split) -> Higuchi FD per series."""
    mode = FeatureMode(mode)
    if not isinstance(window, EegWindow):
        window = EegWindow(window)
    x = bandpass(car_filter(window.samples), fs=window.sample_rate)
    if mode is FeatureMode.BANDS:
        x = split_bands(x).reshape(-1, x.shape[-1])
    return FeatureVector(higuchi_fd(x, k_max), mode, window.window_id)


def feature_matrix(windows, mode=FeatureMode.BANDS, k_max: int = DEFAULT_K_MAX) -> np.ndarray:
    """Stack :func:`extract_features` over windows into an (m, n) array."""
    mode = FeatureMode(mode)
    rows = [extract_features(w, mode, k_max).values for w in windows]
    if not rows:
        return np.empty((0, mode.n_features))
    return np.vstack(rows)

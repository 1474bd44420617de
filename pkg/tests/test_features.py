import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padloop.errors import DegenerateInputError, InvalidInputError
from padloop.features import (
    CHANNELS,
    WINDOW_SAMPLES,
    EegWindow,
    FeatureMode,
    approximation_reconstruct,
    band_reconstruct,
    bandpass,
    car_filter,
    dwt_decompose,
    extract_features,
    feature_names,
    higuchi_fd,
)

FS = 128.0
T = np.arange(WINDOW_SAMPLES) / FS

# Daubechies (1988) 4-vanishing-moment scaling filter, as tabulated in the literature.
DB4_SCALING = np.array([
    0.2303778133088964, 0.7148465705529154, 0.6308807679298587, -0.0279837694168599,
    -0.1870348117190931, 0.0308413818355607, 0.0328830116668852, -0.0105974017850690,
])
# quadrature-mirror high-pass: g[n] = (-1)^n h[L-1-n]
DB4_HIGHPASS = np.array([(-1) ** n * DB4_SCALING[7 - n] for n in range(8)])


def _random_window(seed):
    rng = np.random.default_rng(seed)
    return EegWindow(rng.standard_normal((len(CHANNELS), WINDOW_SAMPLES)) * 10.0)


def _spectral_synthesis(target_fd, n, seed):
    # fBm-like trace: PSD ~ f^-(5 - 2 FD)
    rng = np.random.default_rng(seed)
    freqs = np.fft.rfftfreq(4 * n)
    amp = np.zeros_like(freqs)
    amp[1:] = freqs[1:] ** (-(5.0 - 2.0 * target_fd) / 2.0)
    spec = amp * (rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size))
    return np.fft.irfft(spec)[:n]


# ---- common average reference ----

def test_car_identical_channels_gives_zero():
    row = np.sin(T * 3.0)
    out = car_filter(np.tile(row, (14, 1)))
    assert np.abs(out).max() <= 1e-15


def test_car_two_channels_closed_form():
    a = np.array([1.0, 5.0, -2.0])
    b = np.array([3.0, 1.0, 4.0])
    out = car_filter(np.vstack([a, b]))
    np.testing.assert_allclose(out, np.vstack([(a - b) / 2, (b - a) / 2]), rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_car_channel_mean_is_zero(seed):
    w = _random_window(seed)
    out = car_filter(w)
    assert isinstance(out, EegWindow)
    assert out.samples.shape == w.samples.shape
    assert np.abs(out.samples.mean(axis=0)).max() < 1e-12


def test_car_rejects_single_channel():
    with pytest.raises(InvalidInputError):
        car_filter(np.ones((1, 100)))


# ---- band-pass ----

def test_bandpass_passes_10hz():
    x = np.sin(2 * np.pi * 10 * T)
    y = bandpass(x)
    assert abs(np.sqrt(np.mean(y**2)) / np.sqrt(np.mean(x**2)) - 1.0) < 0.3
    # forward-backward filtering leaves no phase lag
    assert np.argmax(np.correlate(y[200:-200], x[200:-200], "full")) == len(x[200:-200]) - 1


def test_bandpass_rejects_dc():
    y = bandpass(np.full(WINDOW_SAMPLES, 7.0))
    assert np.sqrt(np.mean(y**2)) <= 0.1 * 7.0


def test_bandpass_zero_in_zero_out():
    assert np.all(bandpass(np.zeros(WINDOW_SAMPLES)) == 0.0)


@pytest.mark.parametrize("low,high", [(0.0, 60.0), (30.0, 10.0), (1.0, 64.0), (-1.0, 5.0)])
def test_bandpass_rejects_bad_edges(low, high):
    with pytest.raises(InvalidInputError):
        bandpass(np.zeros(WINDOW_SAMPLES), low, high)


# ---- wavelet decomposition ----

def test_dwt_constant_series_has_no_detail():
    c = dwt_decompose(np.full(WINDOW_SAMPLES, 3.5))
    for level in (1, 2, 3, 4):
        assert np.abs(c.detail(level)).max() < 1e-8 * 3.5
    assert np.abs(c.a4).max() > 1.0


def test_dwt_lengths_halve_per_level():
    c = dwt_decompose(np.random.default_rng(1).standard_normal(WINDOW_SAMPLES))
    n = WINDOW_SAMPLES
    for level in (1, 2, 3, 4):
        # half-point symmetric extension adds (filter_len - 1) samples before downsampling
        n = (n + 8 - 1) // 2
        assert c.detail(level).shape[-1] == n
    assert c.a4.shape[-1] == n


def test_dwt_impulse_matches_db4_highpass_taps():
    n = 256
    recovered = np.zeros(8)
    for p in (128, 129):
        x = np.zeros(n)
        x[p] = 1.0
        d1 = dwt_decompose(x).d1
        # oracle: convolve with the published taps, keep every other sample
        full = np.convolve(x, DB4_HIGHPASS)
        nonzero_oracle = full[np.abs(full) > 0]
        nz = d1[np.abs(d1) > 1e-12]
        assert nz.size == 4
        # the decimated response is one polyphase half of the filter, up to time reversal
        phases = [nonzero_oracle[0::2], nonzero_oracle[1::2], nonzero_oracle[::-1][0::2], nonzero_oracle[::-1][1::2]]
        assert any(np.allclose(nz, ph, atol=1e-12) for ph in phases)
        recovered[np.isin(np.round(nonzero_oracle, 12), np.round(nz, 12))] = 1
    assert recovered.sum() == 8


def test_dwt_rejects_short_series():
    with pytest.raises(InvalidInputError):
        dwt_decompose(np.ones(15))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_dwt_perfect_reconstruction(seed):
    x = np.random.default_rng(seed).standard_normal(WINDOW_SAMPLES) * 50.0
    c = dwt_decompose(x)
    total = sum(band_reconstruct(c, level) for level in (1, 2, 3, 4)) + approximation_reconstruct(c)
    assert np.abs(total - x).max() < 1e-8 * np.abs(x).max()


def test_band_reconstruct_zero_coeffs():
    c = dwt_decompose(np.zeros(WINDOW_SAMPLES))
    assert np.all(band_reconstruct(c, 2) == 0.0)


@pytest.mark.parametrize("level", [0, 5, -1])
def test_band_reconstruct_rejects_level(level):
    c = dwt_decompose(np.ones(64))
    with pytest.raises(InvalidInputError):
        band_reconstruct(c, level)


def test_gamma_band_captures_40hz():
    x = np.sin(2 * np.pi * 40 * T)
    c = dwt_decompose(x)
    energies = [np.sum(band_reconstruct(c, lv) ** 2) for lv in (1, 2, 3, 4)]
    energies.append(np.sum(approximation_reconstruct(c) ** 2))
    assert energies[0] / sum(energies) >= 0.7


# ---- Higuchi fractal dimension ----

def test_higuchi_line():
    fd = higuchi_fd(np.arange(WINDOW_SAMPLES, dtype=float), k_max=8)
    assert 1.0 <= fd <= 1.05


def test_higuchi_white_noise():
    fd = higuchi_fd(np.random.default_rng(7).standard_normal(WINDOW_SAMPLES), k_max=8)
    assert 1.9 <= fd <= 2.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_higuchi_spectral_synthesis_target(seed):
    fd = higuchi_fd(_spectral_synthesis(1.5, WINDOW_SAMPLES, seed), k_max=8)
    assert abs(fd - 1.5) <= 0.1


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-3),
    st.floats(-1e3, 1e3),
)
def test_higuchi_affine_invariance(seed, a, b):
    x = _spectral_synthesis(1.6, 512, seed)
    assert abs(higuchi_fd(a * x + b) - higuchi_fd(x)) < 1e-9


def test_higuchi_monotone_in_noise_fraction():
    # common random numbers across mixing levels; tolerance is two standard errors
    noise = np.random.default_rng(11).standard_normal((30, WINDOW_SAMPLES))
    line = np.linspace(0.0, 1.0, WINDOW_SAMPLES)
    levels = [0.0, 1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 1.0]
    fds = np.array([higuchi_fd(line + lam * noise) for lam in levels])
    means = fds.mean(axis=1)
    se = fds.std(axis=1, ddof=1) / np.sqrt(noise.shape[0])
    assert np.all(np.diff(means) >= -2 * (se[1:] + se[:-1]))
    assert means[0] <= 1.05 and means[-1] >= 1.9


def test_higuchi_constant_is_degenerate():
    with pytest.raises(DegenerateInputError):
        higuchi_fd(np.full(100, 2.0))


def test_higuchi_rejects_short_or_small_kmax():
    with pytest.raises(InvalidInputError):
        higuchi_fd(np.arange(10.0), k_max=8)
    with pytest.raises(InvalidInputError):
        higuchi_fd(np.arange(100.0), k_max=1)


def test_higuchi_rows_match_single_calls():
    x = np.random.default_rng(3).standard_normal((4, 300)).cumsum(axis=1)
    batch = higuchi_fd(x)
    assert batch.shape == (4,)
    for row, fd in zip(x, batch):
        assert higuchi_fd(row) == pytest.approx(fd, abs=1e-13)


# ---- feature extraction ----

def test_extract_shapes_and_ordering():
    w = _random_window(5)
    eeg = extract_features(w, FeatureMode.EEG)
    bands = extract_features(w, "BANDS")
    assert eeg.values.shape == (14,)
    assert bands.values.shape == (56,)
    assert feature_names("BANDS")[:5] == ["fd_AF3_theta", "fd_AF3_alpha", "fd_AF3_beta", "fd_AF3_gamma", "fd_F7_theta"]
    assert np.all((bands.values >= 1.0) & (bands.values <= 2.0))


def test_extract_band_layout_is_channel_major():
    # gamma-only content on one channel raises only that channel's gamma slot relative to its theta slot
    w = _random_window(8)
    v = extract_features(w, "BANDS").values.reshape(14, 4)
    assert np.all(v[:, 0] < v[:, 3])


def test_extract_deterministic():
    a = extract_features(_random_window(9), "BANDS").values
    b = extract_features(_random_window(9), "BANDS").values
    assert a.tobytes() == b.tobytes()


def test_window_invariants():
    with pytest.raises(InvalidInputError):
        EegWindow(np.zeros((13, WINDOW_SAMPLES)))
    with pytest.raises(InvalidInputError):
        EegWindow(np.zeros((14, 100)))
    bad = np.zeros((14, WINDOW_SAMPLES))
    bad[0, 0] = np.nan
    with pytest.raises(InvalidInputError):
        EegWindow(bad)


def test_extract_constant_window_is_degenerate():
    with pytest.raises(DegenerateInputError):
        extract_features(EegWindow(np.ones((14, WINDOW_SAMPLES))), "EEG")

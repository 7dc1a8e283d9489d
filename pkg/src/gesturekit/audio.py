"""Audio frontend: WAV loading, RMS normalization, and MFCC speech features.

Each video frame (15 Hz) gets a 28-dimensional feature vector: 13 mel-frequency
cepstral coefficients plus the log mean frame energy, concatenated with their
backward-difference temporal derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fftpack import dct
from scipy.io import wavfile

from .errors import ConfigError, DataError

FRAME_RATE = 15
N_STATIC = 14  # 13 MFCCs + log energy
FEATURE_DIM = 2 * N_STATIC


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True)
class AudioConfig:
    """Analysis parameters for the MFCC chain.

    The analysis window is a 25 ms Hamming window centered on each video-frame
    timestamp (hop = 1/15 s). 40 triangular mel filters span 0 Hz to Nyquist;
    filterbank energies are floored at ``energy_floor`` before the log, and
    cepstra are the first 13 coefficients of an orthonormal DCT-II.
    Pre-emphasis (0.97) is applied inside each window, HTK-style:
    ``y[0] = x[0]*(1-k)``, ``y[n] = x[n] - k*x[n-1]``.
    """

    sample_rate: int = 16000
    window_seconds: float = 0.025
    n_mels: int = 40
    n_mfcc: int = 13
    pre_emphasis: float = 0.97
    energy_floor: float = 1e-10
    target_rms: float = 0.1

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not 0.0 < self.window_seconds <= 1.0:
            raise ConfigError("window_seconds out of range")
        if self.n_mels < self.n_mfcc:
            raise ConfigError("need at least as many mel filters as cepstra")

    @property
    def window_length(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def fft_length(self) -> int:
        return _next_pow2(self.window_length)


@dataclass
class AudioSignal:
    """Mono amplitude sequence in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be a positive integer")
        if self.samples.size == 0:
            raise DataError("audio signal is empty")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("audio signal contains non-finite samples")
        if np.max(np.abs(self.samples)) > 1.0 + 1e-9:
            raise DataError("audio samples must lie in [-1, 1]")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureFrame:
    """One 28-dim speech feature frame."""

    mfcc: np.ndarray
    log_energy: float
    d_mfcc: np.ndarray
    d_log_energy: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.mfcc, [self.log_energy], self.d_mfcc, [self.d_log_energy]])

    @classmethod
    def from_vector(cls, vec) -> "FeatureFrame":
        v = np.asarray(vec, dtype=np.float64).ravel()
        if v.shape != (FEATURE_DIM,):
            raise DataError(f"feature frame must have {FEATURE_DIM} values")
        return cls(mfcc=v[:13], log_energy=float(v[13]),
                   d_mfcc=v[14:27], d_log_energy=float(v[27]))


@dataclass
class AudioFeatureSequence:
    """Per-frame 28-dim speech features at the fixed 15 Hz video rate."""

    data: np.ndarray  # (frames, 28) float64
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.frame_rate != FRAME_RATE:
            raise DataError(f"feature frame rate must be {FRAME_RATE} Hz")
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise DataError("feature sequence must be a non-empty 2D array")
        if self.data.shape[1] != FEATURE_DIM:
            raise DataError(f"feature frames must have {FEATURE_DIM} dims, "
                            f"got {self.data.shape[1]}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("feature sequence contains non-finite values")

    def __len__(self) -> int:
        return self.data.shape[0]

    def frame(self, t: int) -> FeatureFrame:
        return FeatureFrame.from_vector(self.data[t])


def load_wav(path) -> AudioSignal:
    """Load a mono PCM-16 or float-32 WAV; stereo is averaged to mono."""
    try:
        rate, raw = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"{path}: cannot read WAV: {exc}") from exc
    arr = np.asarray(raw)
    if arr.ndim == 2:
        arr = arr.mean(axis=1)
    if raw.dtype == np.int16:
        samples = arr.astype(np.float64) / 32768.0
    elif raw.dtype in (np.float32, np.float64):
        samples = np.clip(arr.astype(np.float64), -1.0, 1.0)
    else:
        raise DataError(f"{path}: unsupported WAV sample format {raw.dtype}")
    return AudioSignal(samples=samples, sample_rate=int(rate))


def normalize_signal(signal: AudioSignal, target_rms: float = 0.1) -> AudioSignal:
    """Scale to the target RMS, clipping to [-1, 1]; silence passes through."""
    rms = float(np.sqrt(np.mean(signal.samples ** 2)))
    if rms == 0.0:
        return AudioSignal(signal.samples.copy(), signal.sample_rate)
    scaled = np.clip(signal.samples * (target_rms / rms), -1.0, 1.0)
    return AudioSignal(scaled, signal.sample_rate)


def mel_filterbank(n_mels: int, fft_length: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters spanning 0 Hz to Nyquist.

    Returns a (n_mels, fft_length // 2 + 1) weight matrix; triangles are
    evaluated at the FFT bin center frequencies and are not area-normalized.
    """
    return _mel_filterbank_cached(n_mels, fft_length, sample_rate)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_filterbank_cached(n_mels, fft_length, sample_rate):
    n_bins = fft_length // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / fft_length
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0),
                                   n_mels + 2))
    rising = (bin_freqs[None, :] - edges[:-2, None]) / (edges[1:-1, None] - edges[:-2, None])
    falling = (edges[2:, None] - bin_freqs[None, :]) / (edges[2:, None] - edges[1:-1, None])
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights.flags.writeable = False
    return weights


def compute_mfcc_frame(window, sample_rate: int,
                       config: AudioConfig = AudioConfig()) -> tuple[np.ndarray, float]:
    """Compute (13 MFCCs, log energy) for one analysis window.

    The chain is pre-emphasis, Hamming taper, |FFT|^2, triangular mel
    filterbank, log (floored), orthonormal DCT-II, keep coefficients 0..12.
    Log energy is computed on the raw window before pre-emphasis.
    """
    if sample_rate != config.sample_rate:
        raise ConfigError(f"sample rate {sample_rate} does not match "
                          f"configured {config.sample_rate}")
    w = np.asarray(window, dtype=np.float64).ravel()
    if w.shape != (config.window_length,):
        raise ConfigError(f"analysis window must have {config.window_length} "
                          f"samples, got {w.size}")

    log_energy = float(np.log(np.mean(w ** 2) + config.energy_floor))

    emphasized = np.empty_like(w)
    emphasized[0] = w[0] * (1.0 - config.pre_emphasis)
    emphasized[1:] = w[1:] - config.pre_emphasis * w[:-1]
    tapered = emphasized * np.hamming(w.size)

    spectrum = np.abs(np.fft.rfft(tapered, config.fft_length)) ** 2
    fbank = mel_filterbank(config.n_mels, config.fft_length, sample_rate)
    energies = np.maximum(fbank @ spectrum, config.energy_floor)
    coeffs = dct(np.log(energies), type=2, norm="ortho")[:config.n_mfcc]
    return coeffs, log_energy


def compute_deltas(seq) -> np.ndarray:
    """Backward-difference derivatives: delta[t] = seq[t] - seq[t-1], delta[0] = 0."""
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError("delta input must be a 2D (frames, dims) array")
    if arr.shape[0] < 2:
        raise DataError("need at least 2 frames to compute deltas")
    out = np.zeros_like(arr)
    out[1:] = arr[1:] - arr[:-1]
    return out


def extract_features(signal: AudioSignal,
                     config: AudioConfig = AudioConfig()) -> AudioFeatureSequence:
    """Extract one 28-dim feature frame per 1/15 s of audio.

    Frame t's analysis window is centered on sample round(t * sr / 15);
    samples outside the signal are zero-padded.
    """
    if signal.sample_rate != config.sample_rate:
        raise ConfigError(f"sample rate {signal.sample_rate} does not match "
                          f"configured {config.sample_rate}")
    samples = signal.samples
    win = config.window_length
    if samples.size < win:
        raise DataError(f"signal shorter than one analysis window "
                        f"({samples.size} < {win} samples)")
    n_frames = (samples.size * FRAME_RATE) // signal.sample_rate
    if n_frames < 1:
        raise DataError("signal shorter than one video frame (1/15 s)")

    half = win // 2
    static = np.empty((n_frames, N_STATIC), dtype=np.float64)
    for t in range(n_frames):
        center = int(round(t * signal.sample_rate / FRAME_RATE))
        start = center - half
        frame = np.zeros(win, dtype=np.float64)
        lo = max(start, 0)
        hi = min(start + win, samples.size)
        frame[lo - start:hi - start] = samples[lo:hi]
        mfcc, log_energy = compute_mfcc_frame(frame, signal.sample_rate, config)
        static[t, :13] = mfcc
        static[t, 13] = log_energy

    if n_frames >= 2:
        deltas = compute_deltas(static)
    else:
        deltas = np.zeros_like(static)
    return AudioFeatureSequence(np.concatenate([static, deltas], axis=1))

"""Shared test oracles: finite differences and a brute-force MFCC chain.

The oracles are deliberately written with plain loops and must stay
independent of the library code paths they check.
"""

import numpy as np
import pytest


def max_rel_err(a, b):
    """Element-wise |a - b| / max(1, |a|, |b|), reduced with max."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar f with respect to array x.

    f is re-evaluated with x perturbed in place; it must read x fresh on
    every call.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def finite_difference_sampled(f, x, indices, h=1e-5):
    """Central differences at selected flat indices only."""
    flat = x.reshape(-1)
    out = np.zeros(len(indices), dtype=np.float64)
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return out


# --- brute-force MFCC oracle -----------------------------------------------

def oracle_mfcc_frame(window, sample_rate, n_mels=40, n_mfcc=13,
                      pre_emphasis=0.97, energy_floor=1e-10):
    """The full MFCC chain with explicit loops: per-sample pre-emphasis and
    Hamming taper, direct DFT evaluation of |FFT|^2, per-(filter, bin)
    triangular mel weights, log, and a double-loop orthonormal DCT-II."""
    x = np.asarray(window, dtype=np.float64)
    n = x.size
    log_energy = np.log(np.mean(x ** 2) + energy_floor)

    emphasized = np.zeros(n)
    emphasized[0] = x[0] * (1.0 - pre_emphasis)
    for i in range(1, n):
        emphasized[i] = x[i] - pre_emphasis * x[i - 1]
    tapered = np.zeros(n)
    for i in range(n):
        tapered[i] = emphasized[i] * (0.54 - 0.46 * np.cos(2.0 * np.pi * i / (n - 1)))

    nfft = 1
    while nfft < n:
        nfft *= 2
    n_bins = nfft // 2 + 1
    padded = np.zeros(nfft)
    padded[:n] = tapered
    samples_idx = np.arange(nfft)
    power = np.zeros(n_bins)
    for k in range(n_bins):
        phase = -2.0j * np.pi * k * samples_idx / nfft
        power[k] = np.abs(np.sum(padded * np.exp(phase))) ** 2

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = [mel_to_hz(hz_to_mel(0.0) + (hz_to_mel(sample_rate / 2.0) - hz_to_mel(0.0))
                       * j / (n_mels + 1)) for j in range(n_mels + 2)]
    energies = np.zeros(n_mels)
    for m in range(n_mels):
        for k in range(n_bins):
            freq = k * sample_rate / nfft
            if edges[m] <= freq <= edges[m + 1]:
                w = (freq - edges[m]) / (edges[m + 1] - edges[m])
            elif edges[m + 1] <= freq <= edges[m + 2]:
                w = (edges[m + 2] - freq) / (edges[m + 2] - edges[m + 1])
            else:
                w = 0.0
            energies[m] += w * power[k]
        energies[m] = max(energies[m], energy_floor)

    log_e = np.log(energies)
    coeffs = np.zeros(n_mfcc)
    for i in range(n_mfcc):
        acc = 0.0
        for m in range(n_mels):
            acc += log_e[m] * np.cos(np.pi * i * (2 * m + 1) / (2.0 * n_mels))
        scale = np.sqrt(1.0 / n_mels) if i == 0 else np.sqrt(2.0 / n_mels)
        coeffs[i] = scale * acc
    return coeffs, log_energy


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260809)

"""Independent reference implementations used as test oracles.

Everything here is deliberately written from first principles (naive DFT
loops, explicit filter constructions, autocorrelation pitch tracking) so the
production code path is checked against a second, independent route.
"""

from __future__ import annotations

import math

import numpy as np


def naive_stft_magnitude(x, window_length, hop_length, fft_size):
    """Center-padded STFT magnitudes via an explicit DFT matrix (no rfft)."""
    x = np.asarray(x, dtype=np.float64)
    pad = fft_size // 2
    mode = "reflect" if len(x) > pad else "constant"
    padded = np.pad(x, pad, mode=mode)
    n_frames = len(x) // hop_length + 1
    # periodic Hann, written out rather than taken from a library
    n = np.arange(window_length)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window_length)
    window = np.zeros(fft_size)
    offset = (fft_size - window_length) // 2
    window[offset : offset + window_length] = hann
    k = np.arange(fft_size // 2 + 1)
    t = np.arange(fft_size)
    dft = np.exp(-2j * np.pi * np.outer(k, t) / fft_size)
    frames = np.stack(
        [padded[i * hop_length : i * hop_length + fft_size] * window for i in range(n_frames)]
    )
    return np.abs(frames @ dft.T)


def reference_mel_filters(n_mels, fft_size, sample_rate, fmin=0.0, fmax=None):
    """HTK triangular filters built with explicit loops over bins."""
    if fmax is None:
        fmax = sample_rate / 2.0
    mel = lambda f: 2595.0 * math.log10(1.0 + f / 700.0)
    inv = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    pts = [inv(mel(fmin) + (mel(fmax) - mel(fmin)) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    n_bins = fft_size // 2 + 1
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, ce, hi = pts[m], pts[m + 1], pts[m + 2]
        for b in range(n_bins):
            f = b * sample_rate / fft_size
            if lo < f < ce:
                fb[m, b] = (f - lo) / (ce - lo)
            elif ce <= f < hi:
                fb[m, b] = (hi - f) / (hi - ce)
            elif f == ce:
                fb[m, b] = 1.0
    return fb


def reference_log_mel(x, sample_rate, n_mels=128, window_length=1200, hop_length=300,
                      fft_size=2048, log_floor=1e-5, fmin=0.0, fmax=None):
    mag = naive_stft_magnitude(x, window_length, hop_length, fft_size)
    fb = reference_mel_filters(n_mels, fft_size, sample_rate, fmin, fmax)
    return np.log(mag @ fb.T + log_floor)


def bddm_loss_transcription(frozen_eps, eps, alpha_bar, beta_hat, dims=None):
    """Straight-line transcription of the schedule-network step objective."""
    frozen_eps = np.asarray(frozen_eps, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    d = eps.size if dims is None else dims
    first = 0.0
    for a, b in zip(eps.ravel(), frozen_eps.ravel()):
        r = math.sqrt(1.0 - alpha_bar) * a - beta_hat / math.sqrt(1.0 - alpha_bar) * b
        first += r * r
    first /= 2.0 * (1.0 - beta_hat - alpha_bar)
    second = 0.25 * math.log((1.0 - alpha_bar) / beta_hat)
    third = d / 2.0 * (beta_hat / (1.0 - alpha_bar) - 1.0)
    return first + second + third


def f0_track(x, rate, frame=2048, hop=512, fmin=100.0, fmax=1000.0, rms_gate=0.02):
    """Autocorrelation pitch track.

    Returns (f0_hz, voiced) arrays, one entry per frame; f0 is nan where
    unvoiced. Parabolic interpolation refines the autocorrelation peak.
    """
    x = np.asarray(x, dtype=np.float64)
    lag_min = int(rate / fmax)
    lag_max = int(rate / fmin)
    n_frames = max(0, (len(x) - frame) // hop + 1)
    f0 = np.full(n_frames, np.nan)
    voiced = np.zeros(n_frames, dtype=bool)
    for i in range(n_frames):
        seg = x[i * hop : i * hop + frame]
        rms = math.sqrt(float(np.mean(seg**2)))
        if rms < rms_gate:
            continue
        seg = seg - seg.mean()
        spec = np.fft.rfft(seg, n=2 * frame)
        ac = np.fft.irfft(spec * np.conj(spec))[: lag_max + 2]
        if ac[0] <= 0:
            continue
        ac = ac / ac[0]
        window = ac[lag_min : lag_max + 1]
        best = float(window.max())
        if best < 0.4:
            continue
        # periodic tones peak at every multiple of the true period; take the
        # smallest local-max lag near the global peak height
        k = int(np.argmax(window)) + lag_min
        for lag in range(lag_min + 1, lag_max):
            if ac[lag] >= 0.85 * best and ac[lag] >= ac[lag - 1] and ac[lag] >= ac[lag + 1]:
                k = lag
                break
        if 1 <= k < len(ac) - 1:
            a, b, c = ac[k - 1], ac[k], ac[k + 1]
            denom = a - 2 * b + c
            shift = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
            shift = float(np.clip(shift, -0.5, 0.5))
        else:
            shift = 0.0
        voiced[i] = True
        f0[i] = rate / (k + shift)
    return f0, voiced


def semitone_error(f_a, f_b):
    return 12.0 * np.abs(np.log2(f_a / f_b))


def f0_match_fraction(generated, conditioning, rate, tol_semitones=1.0):
    """Fraction of conditioning-voiced frames where pitch matches within tol."""
    f_gen, _ = f0_track(generated, rate)
    f_cond, v_cond = f0_track(conditioning, rate)
    n = min(len(f_gen), len(f_cond))
    mask = v_cond[:n]
    if mask.sum() == 0:
        return float("nan")
    gen = f_gen[:n][mask]
    cond = f_cond[:n][mask]
    ok = np.isfinite(gen) & (semitone_error(np.where(np.isfinite(gen), gen, 1.0), cond) <= tol_semitones)
    return float(np.mean(ok))

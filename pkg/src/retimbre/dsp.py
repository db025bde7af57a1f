"""Audio I/O and signal transforms.

Conventions used throughout the package:

* Waveforms are numpy float arrays in [-1, 1]; mono clips are 1-D,
  multichannel clips are (num_samples, channels).
* The log-mel front end frames a center-padded signal (pad width
  ``fft_size // 2``, reflect mode where the signal is long enough), applies a
  periodic Hann window of ``window_length`` samples centered inside the FFT
  buffer, and maps magnitudes through an HTK-style triangular mel filterbank
  spanning fmin..fmax. Entries are ``log(mel_magnitude + log_floor)``.
* Frame count for a clip of L samples is ``L // hop_length + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import DataError

_PCM16_SCALE = 32767.0


@dataclass(frozen=True)
class AudioClip:
    """A waveform with its sample rate.

    ``samples`` is 1-D for mono audio, (num_samples, channels) otherwise.
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.dtype not in (np.float32, np.float64):
            samples = samples.astype(np.float32)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.ndim not in (1, 2):
            raise DataError(f"samples must be 1-D or 2-D, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise DataError("clip contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0 + 1e-6:
            raise DataError("clip samples exceed [-1, 1]")

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass(frozen=True)
class MelFeatureConfig:
    """Log-mel front-end parameters.

    ``fmax=None`` means Nyquist at extraction time. The log base is natural.
    """

    n_mels: int = 128
    window_length: int = 1200
    hop_length: int = 300
    fft_size: int = 2048
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-5

    def __post_init__(self):
        if not (0 < self.hop_length <= self.window_length <= self.fft_size):
            raise DataError("need 0 < hop_length <= window_length <= fft_size")
        if not (0 < self.n_mels < self.fft_size // 2 + 1):
            raise DataError("need 0 < n_mels < fft_size/2 + 1")
        if self.log_floor <= 0:
            raise DataError("log_floor must be positive")


@dataclass(frozen=True)
class MelSpectrogram:
    """frames x n_mels matrix of log mel magnitudes."""

    values: np.ndarray
    config: MelFeatureConfig
    sample_rate: int

    def __post_init__(self):
        values = np.asarray(self.values)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[1] != self.config.n_mels:
            raise DataError(f"mel values must be frames x {self.config.n_mels}")
        if not np.all(np.isfinite(values)):
            raise DataError("mel spectrogram contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    def frame_slice(self, start: int, stop: int) -> "MelSpectrogram":
        return replace(self, values=self.values[start:stop])


def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM or float WAV; samples scaled to [-1, 1].

    Multichannel files keep their channels until :func:`to_mono`.
    """
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise DataError(f"WAV file not found: {path}") from None
    except Exception as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / _PCM16_SCALE
    elif data.dtype == np.int32:
        samples = data.astype(np.float32) / 2147483647.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float32)
    else:
        raise DataError(f"unsupported WAV encoding {data.dtype} in {path}")
    samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=int(rate), source_id=str(path))


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write a clip as 32-bit float (default) or 16-bit PCM WAV."""
    if encoding == "float32":
        data = clip.samples.astype(np.float32)
    elif encoding == "pcm16":
        scaled = np.round(np.clip(clip.samples, -1.0, 1.0) * _PCM16_SCALE)
        data = scaled.astype(np.int16)
    else:
        raise DataError(f"unsupported encoding {encoding!r}")
    scipy.io.wavfile.write(path, clip.sample_rate, data)


def to_mono(clip: AudioClip) -> AudioClip:
    """Per-sample channel mean; identity on mono input."""
    if clip.num_samples == 0:
        raise DataError("cannot convert an empty clip to mono")
    if clip.samples.ndim == 1:
        return clip
    return replace(clip, samples=clip.samples.mean(axis=1).astype(clip.samples.dtype))


def peak_normalize(clip: AudioClip, peak_db: float = -1.0) -> AudioClip:
    """Scale so the absolute peak sits at ``peak_db`` dBFS; no-op on silence."""
    peak = float(np.max(np.abs(clip.samples))) if clip.num_samples else 0.0
    if peak <= 0.0:
        return clip
    target = 10.0 ** (peak_db / 20.0)
    return replace(clip, samples=(clip.samples * (target / peak)).astype(clip.samples.dtype))


def _window_rms_db(x: np.ndarray, window: int) -> np.ndarray:
    """RMS level in dBFS over consecutive non-overlapping windows."""
    n_blocks = int(math.ceil(len(x) / window))
    padded = np.zeros(n_blocks * window, dtype=np.float64)
    padded[: len(x)] = x
    blocks = padded.reshape(n_blocks, window)
    rms = np.sqrt(np.mean(blocks**2, axis=1))
    return 20.0 * np.log10(np.maximum(rms, 1e-10))


def trim_silence(
    pair: tuple[AudioClip, AudioClip],
    threshold_db: float = -40.0,
    min_gap_s: float = 0.3,
    window_s: float = 0.05,
) -> tuple[AudioClip, AudioClip]:
    """Cut intervals where either clip of an aligned pair is silent.

    Silence is windowed RMS below ``threshold_db`` (non-overlapping windows of
    ``window_s``); only silent runs longer than ``min_gap_s`` are removed, and
    both clips are cut identically. A fully silent pair comes back empty --
    the degenerate marker the caller must check.
    """
    a, b = pair
    if a.sample_rate != b.sample_rate or a.num_samples != b.num_samples:
        raise DataError("trim_silence needs aligned clips of equal length and rate")
    if a.samples.ndim != 1 or b.samples.ndim != 1:
        raise DataError("trim_silence expects mono clips")
    rate = a.sample_rate
    window = max(1, int(round(window_s * rate)))
    db_a = _window_rms_db(a.samples.astype(np.float64), window)
    db_b = _window_rms_db(b.samples.astype(np.float64), window)
    silent = (db_a < threshold_db) | (db_b < threshold_db)

    min_blocks = max(1, int(math.ceil(min_gap_s / window_s)))
    keep = np.ones(a.num_samples, dtype=bool)
    i = 0
    while i < len(silent):
        if silent[i]:
            j = i
            while j < len(silent) and silent[j]:
                j += 1
            if j - i >= min_blocks:
                start = i * window
                stop = min(j * window, a.num_samples)
                keep[start:stop] = False
            i = j
        else:
            i += 1
    out_a = replace(a, samples=a.samples[keep])
    out_b = replace(b, samples=b.samples[keep])
    return out_a, out_b


def fragment(clip: AudioClip, seconds: float = 5.0) -> list[AudioClip]:
    """Consecutive non-overlapping excerpts of exactly ``seconds``; remainder dropped."""
    if seconds <= 0:
        raise DataError("fragment length must be positive")
    n = int(round(seconds * clip.sample_rate))
    count = clip.num_samples // n
    return [
        replace(clip, samples=clip.samples[i * n : (i + 1) * n], source_id=_frag_id(clip, i))
        for i in range(count)
    ]


def _frag_id(clip: AudioClip, index: int) -> str | None:
    return None if clip.source_id is None else f"{clip.source_id}#frag{index}"


def fragment_pair(
    a: AudioClip, b: AudioClip, seconds: float = 5.0
) -> list[tuple[AudioClip, AudioClip]]:
    """Fragment an aligned pair with identical boundaries."""
    if a.num_samples != b.num_samples or a.sample_rate != b.sample_rate:
        raise DataError("fragment_pair needs aligned clips")
    return list(zip(fragment(a, seconds), fragment(b, seconds)))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited (polyphase windowed-sinc) resampling; no-op at equal rates."""
    if target_rate <= 0:
        raise DataError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    g = math.gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out = scipy.signal.resample_poly(clip.samples.astype(np.float64), up, down, axis=0)
    out = np.clip(out, -1.0, 1.0).astype(np.float32)
    return AudioClip(samples=out, sample_rate=target_rate, source_id=clip.source_id)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    return scipy.signal.get_window("hann", length, fftbins=True).astype(np.float64)


def mel_filterbank(cfg: MelFeatureConfig, sample_rate: int) -> np.ndarray:
    """HTK-style triangular filters, (n_mels, fft_size//2 + 1)."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    fmax = sample_rate / 2.0 if cfg.fmax is None else cfg.fmax
    if not (0 <= cfg.fmin < fmax <= sample_rate / 2.0 + 1e-9):
        raise DataError("need 0 <= fmin < fmax <= rate/2")
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    n_bins = cfg.fft_size // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / cfg.fft_size
    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for m in range(cfg.n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def mel_band_edges(cfg: MelFeatureConfig, sample_rate: int) -> np.ndarray:
    """(n_mels, 3) array of (lower, center, upper) filter frequencies in Hz."""
    fmax = sample_rate / 2.0 if cfg.fmax is None else cfg.fmax
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    inv = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    pts = inv(np.linspace(mel(cfg.fmin), mel(fmax), cfg.n_mels + 2))
    return np.stack([pts[:-2], pts[1:-1], pts[2:]], axis=1)


def frame_count(num_samples: int, hop_length: int) -> int:
    return num_samples // hop_length + 1


def stft_magnitude(x: np.ndarray, cfg: MelFeatureConfig) -> np.ndarray:
    """Center-padded STFT magnitudes, (frames, fft_size//2 + 1).

    The Hann window of ``window_length`` is zero-padded symmetrically into the
    ``fft_size`` buffer. Reflect padding needs a signal longer than the pad
    width; shorter clips fall back to zero padding.
    """
    x = np.asarray(x, dtype=np.float64)
    pad = cfg.fft_size // 2
    mode = "reflect" if len(x) > pad else "constant"
    padded = np.pad(x, pad, mode=mode)
    n_frames = frame_count(len(x), cfg.hop_length)
    window = np.zeros(cfg.fft_size, dtype=np.float64)
    offset = (cfg.fft_size - cfg.window_length) // 2
    window[offset : offset + cfg.window_length] = hann_window(cfg.window_length)
    frames = np.stack(
        [padded[t * cfg.hop_length : t * cfg.hop_length + cfg.fft_size] for t in range(n_frames)]
    )
    return np.abs(np.fft.rfft(frames * window, n=cfg.fft_size, axis=1))


def log_mel(clip: AudioClip, cfg: MelFeatureConfig) -> MelSpectrogram:
    """Log-mel spectrogram of a mono clip; deterministic for fixed input."""
    if clip.samples.ndim != 1:
        raise DataError("log_mel expects a mono clip")
    if clip.num_samples < cfg.hop_length:
        raise DataError(
            f"clip too short for mel extraction: {clip.num_samples} < {cfg.hop_length}"
        )
    mag = stft_magnitude(clip.samples, cfg)
    fb = mel_filterbank(cfg, clip.sample_rate)
    mel = mag @ fb.T
    values = np.log(mel + cfg.log_floor).astype(np.float32)
    return MelSpectrogram(values=values, config=cfg, sample_rate=clip.sample_rate)

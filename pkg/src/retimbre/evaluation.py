"""Frechet-distance evaluation over pluggable clip embeddings.

The distance between two embedding sets is the Frechet distance between
Gaussian fits:

    ||mu_a - mu_b||^2 + tr(Sigma_a + Sigma_b - 2 (Sigma_a Sigma_b)^(1/2))

The matrix square root uses an eigendecomposition of the symmetrized product
sqrt(Sigma_a) Sigma_b sqrt(Sigma_a); tiny negative eigenvalues are clipped.
Covariances are unbiased (n-1 denominator).

External pretrained embedders are deliberately not bundled; adapters implement
the :class:`Embedder` interface (optionally declaring a required sample rate).
The built-in embedder summarizes log-mel statistics and exists so the pipeline
is scoreable end to end without downloads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dsp
from .dsp import AudioClip, MelFeatureConfig
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

EVAL_SCHEMA_VERSION = 1
_SYMMETRY_TOL = 1e-9
_PSD_TOL = 1e-9
_NEGATIVE_FD_TOL = 1e-6


@dataclass(frozen=True)
class EmbeddingStats:
    """Gaussian fit (mean, covariance, count) of a set of clip embeddings."""

    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DataError("mean must be d-vector and covariance d x d")
        if self.n < 2:
            raise DataError("embedding stats need at least 2 samples")
        if np.max(np.abs(cov - cov.T)) > _SYMMETRY_TOL * max(1.0, np.max(np.abs(cov))):
            raise NumericalError("covariance is not symmetric within tolerance")
        eigvals = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        if eigvals.min() < -_PSD_TOL * max(1.0, eigvals.max(), 0.0):
            raise NumericalError("covariance has significantly negative eigenvalues")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class Embedder:
    """Named, fixed-dimension, deterministic clip-to-vector map.

    ``required_rate`` lets adapters for external models declare the rate they
    expect; the evaluation harness resamples clips to it before embedding.
    """

    name: str
    dim: int
    fn: Callable[[AudioClip], np.ndarray]
    required_rate: int | None = None

    def embed(self, clip: AudioClip) -> np.ndarray:
        if self.required_rate is not None and clip.sample_rate != self.required_rate:
            clip = dsp.resample(clip, self.required_rate)
        vec = np.asarray(self.fn(clip), dtype=np.float64)
        if vec.shape != (self.dim,):
            raise DataError(
                f"embedder {self.name!r} returned shape {vec.shape}, expected ({self.dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise NumericalError(f"embedder {self.name!r} returned non-finite values")
        return vec


def embed_stats(clips: Sequence[AudioClip], emb: Embedder) -> EmbeddingStats:
    """Sample mean and unbiased covariance of the clip embeddings."""
    if len(clips) < 2:
        raise DataError("need at least 2 clips for embedding statistics")
    x = np.stack([emb.embed(c) for c in clips])
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return EmbeddingStats(mean=mean, covariance=cov, n=len(clips))


def _floor_eigvals(eigvals: np.ndarray) -> np.ndarray:
    """Zero out eigenvalues that are numerical noise.

    Rank-deficient covariances produce spurious eigenvalues around
    +-eps * lambda_max whose square roots would otherwise dominate the trace
    term; flooring relative to the largest eigenvalue removes them.
    """
    top = float(eigvals.max(initial=0.0))
    return np.where(eigvals > top * 1e-12, eigvals, 0.0)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, negatives clipped."""
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = _floor_eigvals(eigvals)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(a: EmbeddingStats, b: EmbeddingStats) -> float:
    """Frechet distance between two Gaussian embedding fits; always >= 0."""
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")
    delta = a.mean - b.mean
    sqrt_a = _sqrtm_psd(a.covariance)
    inner = sqrt_a @ b.covariance @ sqrt_a
    eigvals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    neg_floor = -_PSD_TOL * max(1.0, float(np.max(np.abs(eigvals))))
    if eigvals.min() < neg_floor * 1e3:
        raise NumericalError("covariance product is non-PSD beyond tolerance")
    trace_sqrt = float(np.sum(np.sqrt(_floor_eigvals(eigvals))))
    value = float(delta @ delta + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * trace_sqrt)
    if value < -_NEGATIVE_FD_TOL:
        raise NumericalError(f"Frechet distance {value} below -{_NEGATIVE_FD_TOL}")
    return max(value, 0.0)


def builtin_embedder(mel_cfg: MelFeatureConfig | None = None) -> Embedder:
    """Log-mel summary-statistics embedder, d = 3 * n_mels = 384.

    Long clips are windowed into 1-second hops and window embeddings are
    averaged. Per window the features are per-band mean, per-band std, and
    per-band mean absolute frame-to-frame delta of the log-mel matrix.
    """
    cfg = mel_cfg or MelFeatureConfig()
    dim = 3 * cfg.n_mels

    def _window_features(values: np.ndarray) -> np.ndarray:
        band_mean = values.mean(axis=0)
        band_std = values.std(axis=0)
        if values.shape[0] > 1:
            band_delta = np.abs(np.diff(values, axis=0)).mean(axis=0)
        else:
            band_delta = np.zeros_like(band_mean)
        return np.concatenate([band_mean, band_std, band_delta])

    def _embed(clip: AudioClip) -> np.ndarray:
        if clip.num_samples < cfg.hop_length:
            raise DataError("clip shorter than one mel frame")
        mono = dsp.to_mono(clip)
        window = clip.sample_rate
        feats = []
        for start in range(0, mono.num_samples, window):
            chunk = mono.samples[start : start + window]
            if len(chunk) < cfg.hop_length:
                break
            mel = dsp.log_mel(
                AudioClip(samples=chunk, sample_rate=mono.sample_rate), cfg
            )
            feats.append(_window_features(mel.values.astype(np.float64)))
        if not feats:
            raise DataError("clip shorter than one mel frame")
        return np.mean(feats, axis=0)

    return Embedder(name="mel-stats-384", dim=dim, fn=_embed)


@dataclass
class EvalReport:
    """Directory-level Frechet score plus slots for externally computed metrics."""

    fad_like_score: float
    n_gen: int
    n_ref: int
    embedder_name: str
    schema_version: int = EVAL_SCHEMA_VERSION
    skipped_files: list[str] = field(default_factory=list)
    # Reserved for values produced by external standardized tools.
    visqol: float | None = None
    peaq_odg: float | None = None
    peaq_di: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def _load_directory(path) -> tuple[list[AudioClip], list[str]]:
    wavs = sorted(Path(path).glob("**/*.wav"))
    clips, skipped = [], []
    for wav in wavs:
        try:
            clips.append(dsp.to_mono(dsp.load_wav(wav)))
        except DataError as exc:
            logger.warning("skipping unreadable file %s: %s", wav, exc)
            skipped.append(str(wav))
    return clips, skipped


def evaluate_directory(generated_dir, reference_dir, emb: Embedder | None = None) -> EvalReport:
    """Frechet score between all WAVs under two directories."""
    emb = emb or builtin_embedder()
    gen, skipped_gen = _load_directory(generated_dir)
    ref, skipped_ref = _load_directory(reference_dir)
    if len(gen) < 2 or len(ref) < 2:
        raise DataError(
            f"need at least 2 readable clips per side, got {len(gen)} generated / {len(ref)} reference"
        )
    score = frechet_distance(embed_stats(gen, emb), embed_stats(ref, emb))
    return EvalReport(
        fad_like_score=score,
        n_gen=len(gen),
        n_ref=len(ref),
        embedder_name=emb.name,
        skipped_files=skipped_gen + skipped_ref,
    )

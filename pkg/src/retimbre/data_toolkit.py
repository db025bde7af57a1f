"""Dataset preparation: synthetic paired-instrument corpus and preprocessing.

The synthetic generator renders, per piece, two melodic voices where each
voice is realized by two instruments with identical note content but distinct
timbre (different harmonic amplitude profiles and envelopes), plus the two
cross mixtures. That yields the six transfer directions the pipeline trains
on: within voice 1, within voice 2, and mixture to mixture, each both ways.

Direction tags read ``conditioning->target``: for entry direction "reed->bow",
``path_b`` is the reed rendition (conditioning) and ``path_a`` the bow
rendition (generation target).

Manifests are JSON-lines, one entry per pair, laid out as
``out_dir/<piece>/<track>.wav``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import AudioClip
from .errors import DataError

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ManifestEntry:
    """One aligned pair: target track A, conditioning track B."""

    path_a: str
    path_b: str
    direction: str
    split: str = "train"
    piece: str = ""

    def is_mixture(self) -> bool:
        src, _, dst = self.direction.partition("->")
        return src.startswith("mix") and dst.startswith("mix")


@dataclass
class PairManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for entry in self.entries:
                fh.write(json.dumps(asdict(entry), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "PairManifest":
        if not Path(path).is_file():
            raise DataError(f"manifest not found: {path}")
        entries = []
        with open(path) as fh:
            for i, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(ManifestEntry(**json.loads(line)))
                except (json.JSONDecodeError, TypeError) as exc:
                    raise DataError(f"bad manifest line {i} in {path}: {exc}") from exc
        return cls(entries=entries)

    def validate_files(self) -> None:
        for entry in self.entries:
            for p in (entry.path_a, entry.path_b):
                if not Path(p).is_file():
                    raise DataError(f"manifest references missing file: {p}")

    def filter_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def filter_regime(self, regime: str) -> list[ManifestEntry]:
        if regime == "global":
            return list(self.entries)
        if regime == "mix":
            return [e for e in self.entries if e.is_mixture()]
        raise DataError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class InstrumentTimbre:
    """Additive-synthesis voice: harmonic amplitudes plus an ADSR-ish envelope.

    ``sustain_level`` 0 gives a plucked/struck decay with time constant
    ``decay_s``; positive sustain gives a held tone.
    """

    name: str
    harmonics: tuple[float, ...]
    attack_s: float
    decay_s: float
    sustain_level: float
    release_s: float


# Two voices, two timbre variants each; profiles chosen so the variants are
# clearly separable in mel statistics while carrying identical f0 content:
# reed is dark (odd harmonics, strong fundamental), bow is bright (energy
# tilted into upper harmonics), pluck decays fast around its fundamental,
# bell rings sparse high partials.
REED = InstrumentTimbre("reed", (1.0, 0.02, 0.55, 0.02, 0.30, 0.02, 0.15), 0.06, 0.08, 0.9, 0.05)
BOW = InstrumentTimbre(
    "bow", (0.35, 0.65, 0.8, 0.95, 0.85, 0.7, 0.55, 0.45, 0.35, 0.25), 0.10, 0.10, 0.8, 0.08
)
PLUCK = InstrumentTimbre("pluck", (1.0, 0.5, 0.2, 0.06), 0.005, 0.25, 0.0, 0.02)
BELL = InstrumentTimbre("bell", (0.3, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.6), 0.003, 0.9, 0.0, 0.02)

# Pentatonic pools per voice; kept within a clean autocorrelation range.
_VOICE1_POOL = (220.0, 246.94, 277.18, 329.63, 369.99, 440.0)
_VOICE2_POOL = (164.81, 185.0, 207.65, 246.94, 277.18, 329.63)
_REST = 0.0


@dataclass(frozen=True)
class ToySpec:
    """Parameters of the synthetic paired-instrument corpus."""

    seed: int = 2024
    tempo_bpm: float = 120.0
    piece_seconds: float = 12.0
    sample_rate: int = 16000
    rest_probability: float = 0.1
    voice1: tuple[InstrumentTimbre, InstrumentTimbre] = (REED, BOW)
    voice2: tuple[InstrumentTimbre, InstrumentTimbre] = (PLUCK, BELL)

    def __post_init__(self):
        if self.tempo_bpm <= 0 or self.piece_seconds <= 0 or self.sample_rate <= 0:
            raise DataError("tempo, duration and rate must be positive")


def _note_sequence(rng: np.random.Generator, spec: ToySpec, pool) -> list[float]:
    slot_s = 60.0 / spec.tempo_bpm / 2.0  # eighth notes
    n_slots = int(math.floor(spec.piece_seconds / slot_s))
    seq = []
    for _ in range(n_slots):
        if rng.random() < spec.rest_probability:
            seq.append(_REST)
        else:
            seq.append(float(pool[rng.integers(0, len(pool))]))
    return seq


def _envelope(n: int, rate: int, timbre: InstrumentTimbre) -> np.ndarray:
    t = np.arange(n) / rate
    attack = np.clip(t / max(timbre.attack_s, 1e-4), 0.0, 1.0)
    decay = timbre.sustain_level + (1.0 - timbre.sustain_level) * np.exp(
        -np.clip(t - timbre.attack_s, 0.0, None) / max(timbre.decay_s, 1e-4)
    )
    env = attack * decay
    n_rel = min(n, max(1, int(timbre.release_s * rate)))
    release = np.ones(n)
    release[n - n_rel :] = np.linspace(1.0, 0.0, n_rel)
    return env * release


def render_voice(notes: list[float], timbre: InstrumentTimbre, spec: ToySpec) -> np.ndarray:
    """Additive synthesis of a note sequence with one timbre; peak 0.6."""
    rate = spec.sample_rate
    slot = int(round(60.0 / spec.tempo_bpm / 2.0 * rate))
    out = np.zeros(slot * len(notes), dtype=np.float64)
    for i, f0 in enumerate(notes):
        if f0 <= 0.0:
            continue
        n = slot
        t = np.arange(n) / rate
        tone = np.zeros(n)
        for k, amp in enumerate(timbre.harmonics, start=1):
            if amp == 0.0 or k * f0 >= rate / 2.0:
                continue
            tone += amp * np.sin(2.0 * np.pi * k * f0 * t)
        out[i * slot : (i + 1) * slot] = tone * _envelope(n, rate, timbre)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.6 / peak
    return out.astype(np.float32)


def _mix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = 0.5 * (a.astype(np.float64) + b.astype(np.float64))
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.6 / peak
    return out.astype(np.float32)


def synth_toy_dataset(spec: ToySpec, n_pieces: int, out_dir) -> PairManifest:
    """Render the synthetic corpus: 6 tracks and 6 direction pairs per piece."""
    if n_pieces < 1:
        raise DataError("n_pieces must be >= 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc

    v1a, v1b = spec.voice1
    v2a, v2b = spec.voice2
    mix_ab = f"mix_{v1a.name}_{v2b.name}"
    mix_ba = f"mix_{v1b.name}_{v2a.name}"

    manifest = PairManifest()
    for piece_idx in range(n_pieces):
        rng = np.random.default_rng([spec.seed, piece_idx])
        piece = f"piece_{piece_idx:03d}"
        piece_dir = out_dir / piece
        piece_dir.mkdir(parents=True, exist_ok=True)

        notes1 = _note_sequence(rng, spec, _VOICE1_POOL)
        notes2 = _note_sequence(rng, spec, _VOICE2_POOL)
        stems = {
            v1a.name: render_voice(notes1, v1a, spec),
            v1b.name: render_voice(notes1, v1b, spec),
            v2a.name: render_voice(notes2, v2a, spec),
            v2b.name: render_voice(notes2, v2b, spec),
        }
        # Cross mixtures pair variant a of one voice with variant b of the other.
        tracks = dict(stems)
        tracks[mix_ab] = _mix(stems[v1a.name], stems[v2b.name])
        tracks[mix_ba] = _mix(stems[v1b.name], stems[v2a.name])

        paths = {}
        for name, samples in tracks.items():
            path = piece_dir / f"{name}.wav"
            dsp.write_wav(path, AudioClip(samples=samples, sample_rate=spec.sample_rate))
            paths[name] = str(path)

        directions = [
            (v1a.name, v1b.name),
            (v1b.name, v1a.name),
            (v2a.name, v2b.name),
            (v2b.name, v2a.name),
            (mix_ab, mix_ba),
            (mix_ba, mix_ab),
        ]
        for cond, target in directions:
            manifest.entries.append(
                ManifestEntry(
                    path_a=paths[target],
                    path_b=paths[cond],
                    direction=f"{cond}->{target}",
                    split="train",
                    piece=piece,
                )
            )

    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def preprocess_corpus(
    raw_manifest: PairManifest,
    out_dir,
    rate: int,
    fragment_seconds: float = 5.0,
    trim_threshold_db: float = -40.0,
    trim_min_gap_s: float = 0.3,
    trim_window_s: float = 0.05,
    reserve_val_piece: bool = True,
) -> PairManifest:
    """Mono + resample + pairwise silence trim + fragment each pair.

    The last piece (by sorted id) is reserved for the validation split.
    Misaligned or fully silent pairs are rejected with a log line and the run
    continues.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raw_manifest.validate_files()

    pieces = sorted({e.piece for e in raw_manifest.entries})
    val_piece = pieces[-1] if (reserve_val_piece and len(pieces) > 1) else None

    result = PairManifest()
    hop = dsp.MelFeatureConfig().hop_length
    for entry in raw_manifest.entries:
        try:
            a = dsp.to_mono(dsp.load_wav(entry.path_a))
            b = dsp.to_mono(dsp.load_wav(entry.path_b))
        except DataError as exc:
            logger.warning("rejecting pair %s: %s", entry.direction, exc)
            continue
        a = dsp.resample(a, rate)
        b = dsp.resample(b, rate)
        if abs(a.num_samples - b.num_samples) > hop:
            logger.warning(
                "rejecting pair %s (%s): misaligned by %d samples",
                entry.direction,
                entry.piece,
                abs(a.num_samples - b.num_samples),
            )
            continue
        n = min(a.num_samples, b.num_samples)
        a = AudioClip(samples=a.samples[:n], sample_rate=rate, source_id=a.source_id)
        b = AudioClip(samples=b.samples[:n], sample_rate=rate, source_id=b.source_id)
        a, b = dsp.trim_silence(
            (a, b),
            threshold_db=trim_threshold_db,
            min_gap_s=trim_min_gap_s,
            window_s=trim_window_s,
        )
        if a.num_samples == 0:
            logger.warning("rejecting pair %s (%s): fully silent", entry.direction, entry.piece)
            continue
        pairs = dsp.fragment_pair(a, b, fragment_seconds)
        if not pairs:
            logger.warning(
                "rejecting pair %s (%s): shorter than one %gs fragment",
                entry.direction,
                entry.piece,
                fragment_seconds,
            )
            continue
        split = "val" if entry.piece == val_piece else entry.split
        pair_dir = out_dir / entry.piece / entry.direction.replace("->", "_to_")
        pair_dir.mkdir(parents=True, exist_ok=True)
        for i, (frag_a, frag_b) in enumerate(pairs):
            path_a = pair_dir / f"ex{i:03d}_a.wav"
            path_b = pair_dir / f"ex{i:03d}_b.wav"
            dsp.write_wav(path_a, frag_a)
            dsp.write_wav(path_b, frag_b)
            result.entries.append(
                ManifestEntry(
                    path_a=str(path_a),
                    path_b=str(path_b),
                    direction=entry.direction,
                    split=split,
                    piece=entry.piece,
                )
            )

    result.save(out_dir / "manifest.jsonl")
    result.validate_files()
    return result

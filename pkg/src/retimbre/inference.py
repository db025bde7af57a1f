"""Conditional generation: mel of the conditioning clip + Gaussian noise in,
timbre-transferred waveform out, plus real-time-factor benchmarking.

Reverse-loop math runs in float64 regardless of the network dtype; the output
clip is float32. Randomness is a single numpy Generator seeded per call: the
initial noise is drawn once for the full aligned length, then one fresh z per
reverse step (steps after the final one) per chunk, in chunk order. Long
inputs are processed in mel-aligned chunks concatenated without overlap; the
seam behavior at chunk boundaries is audible with weak models, which is the
price of keeping inference windows at the training excerpt size.
"""

from __future__ import annotations

import json
import logging
import platform
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import diffusion, dsp
from .diffusion import DiffusionState
from .dsp import AudioClip
from .errors import DataError, NumericalError
from .networks import DenoiserModel, denoiser_predict
from .schedule_search import InferenceSchedule

logger = logging.getLogger(__name__)

RTF_REPORT_SCHEMA_VERSION = 1
DEFAULT_CHUNK_FRAMES = 66


def transfer_timbre(
    model,
    cond: AudioClip,
    schedule: InferenceSchedule,
    seed: int = 0,
    chunk_frames: int = DEFAULT_CHUNK_FRAMES,
    mel_config=None,
    sigma_mode: str = "posterior",
) -> AudioClip:
    """Generate audio with the model's timbre and the conditioning clip's content.

    ``model`` is normally a :class:`DenoiserModel`; any callable with the
    ``(x, mel_values, level)`` noise-predictor signature works too (then
    ``mel_config`` must be passed explicitly). Output duration equals the
    conditioning duration.
    """
    if isinstance(model, DenoiserModel):
        if cond.sample_rate != model.sample_rate:
            raise DataError(
                f"conditioning rate {cond.sample_rate} != model rate {model.sample_rate}"
            )
        mel_cfg = model.mel_config
    else:
        if mel_config is None:
            raise DataError("mel_config is required for non-bundle denoisers")
        mel_cfg = mel_config
    if cond.samples.ndim != 1:
        raise DataError("conditioning clip must be mono")
    if chunk_frames < 1:
        raise DataError("chunk_frames must be >= 1")

    mel = dsp.log_mel(cond, mel_cfg)
    hop = mel_cfg.hop_length
    frames = mel.num_frames
    sched = schedule.as_noise_schedule()
    n_steps = len(sched)

    rng = np.random.default_rng(seed)
    x_full = rng.standard_normal(frames * hop)

    pieces = []
    for start in range(0, frames, chunk_frames):
        stop = min(start + chunk_frames, frames)
        mel_chunk = mel.values[start:stop]
        state = DiffusionState(
            x=x_full[start * hop : stop * hop], n=n_steps, schedule=sched
        )
        for n in range(n_steps, 0, -1):
            level = float(np.sqrt(sched.alpha_bar(n)))
            eps_hat = np.asarray(
                denoiser_predict(model, state.x, mel_chunk, level), dtype=np.float64
            )
            z = rng.standard_normal(state.x.shape[0]) if n > 1 else np.zeros_like(state.x)
            state = diffusion.reverse_step(state, eps_hat, z, sigma_mode=sigma_mode)
        pieces.append(state.x)

    out = np.concatenate(pieces)[: cond.num_samples]
    if not np.all(np.isfinite(out)):
        raise NumericalError("generation produced non-finite samples")
    out = np.clip(out, -1.0, 1.0).astype(np.float32)
    return AudioClip(samples=out, sample_rate=cond.sample_rate, source_id=cond.source_id)


def _hardware_descriptor() -> str:
    import torch

    return (
        f"{platform.platform()} | {platform.processor() or 'unknown-cpu'} | "
        f"python {platform.python_version()} | torch {torch.__version__} "
        f"({torch.get_num_threads()} threads)"
    )


def measure_rtf(
    model,
    schedule: InferenceSchedule,
    duration_s: float = 2.0,
    rate: int | None = None,
    repeats: int = 3,
    mel_config=None,
) -> dict:
    """Median wall-clock generation time and real-time factor.

    One unmeasured warmup generation runs first. RTF = audio duration /
    median generation time.
    """
    if repeats < 3:
        raise DataError("repeats must be >= 3")
    if rate is None:
        if not isinstance(model, DenoiserModel):
            raise DataError("rate is required for non-bundle denoisers")
        rate = model.sample_rate
    n = int(round(duration_s * rate))
    cond_rng = np.random.default_rng(0)
    cond = AudioClip(
        samples=(0.1 * cond_rng.standard_normal(n)).astype(np.float32).clip(-1, 1),
        sample_rate=rate,
        source_id="rtf-benchmark",
    )
    transfer_timbre(model, cond, schedule, seed=0, mel_config=mel_config)  # warmup
    times = []
    for i in range(repeats):
        t0 = time.perf_counter()
        transfer_timbre(model, cond, schedule, seed=i, mel_config=mel_config)
        times.append(time.perf_counter() - t0)
    median_s = statistics.median(times)
    report = {
        "schema_version": RTF_REPORT_SCHEMA_VERSION,
        "duration_s": duration_s,
        "rate": rate,
        "steps": len(schedule),
        "repeats": repeats,
        "median_s": median_s,
        "all_times_s": times,
        "rtf": duration_s / median_s,
        "hardware": _hardware_descriptor(),
    }
    json.dumps(report)  # schema must be serializable
    logger.info("RTF %.2fx realtime at %d steps (%.3fs median)", report["rtf"], len(schedule), median_s)
    return report

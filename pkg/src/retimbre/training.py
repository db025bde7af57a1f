"""Training loops: the denoiser under a conditional L1 noise-matching
objective, then the schedule network against the frozen denoiser.

Determinism contract: every random draw in both loops (pair choice, crop
offsets, noise, noise levels, step indices) comes from one numpy Generator
whose state is serialized into checkpoints, so a resumed run continues the
exact stream. Parameter init is seeded separately at model construction.
Guaranteed bit-exact only in single-process, single-worker mode.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import diffusion, dsp, networks
from .data_toolkit import ManifestEntry
from .diffusion import NoiseSchedule
from .dsp import MelFeatureConfig
from .errors import DataError, NumericalError
from .networks import DenoiserModel, ScheduleNetwork

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 2e-4
    batch_size: int = 32
    max_steps: int = 1000
    excerpt_frames: int = 66
    sample_rate: int = 16000
    checkpoint_interval: int = 500
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weight_decay: float = 0.0
    log_interval: int = 50

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_steps", "excerpt_frames",
                     "sample_rate", "checkpoint_interval"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")


@dataclass(frozen=True)
class TrainingPair:
    """One training item: target excerpt and the aligned conditioning mel."""

    target: np.ndarray          # waveform, excerpt_frames * hop samples
    cond_mel: np.ndarray        # excerpt_frames x n_mels
    pair_id: str = ""

    def __post_init__(self):
        target = np.asarray(self.target, dtype=np.float32)
        mel = np.asarray(self.cond_mel, dtype=np.float32)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "cond_mel", mel)
        if target.ndim != 1 or mel.ndim != 2:
            raise DataError("TrainingPair needs 1-D target and 2-D mel")


class PairDataset:
    """Fragment pairs loaded in memory with precomputed conditioning mels.

    Serves random ``excerpt_frames``-long crops; a crop at frame offset s
    covers mel rows [s, s+frames) and target samples [s*hop, (s+frames)*hop).
    """

    def __init__(
        self,
        entries: list[ManifestEntry],
        mel_cfg: MelFeatureConfig,
        excerpt_frames: int,
        sample_rate: int,
    ):
        if not entries:
            raise DataError("dataset has no manifest entries")
        self.mel_cfg = mel_cfg
        self.excerpt_frames = excerpt_frames
        self.sample_rate = sample_rate
        self.items: list[tuple[np.ndarray, np.ndarray, str]] = []
        hop = mel_cfg.hop_length
        for entry in entries:
            a = dsp.load_wav(entry.path_a)
            b = dsp.load_wav(entry.path_b)
            if a.sample_rate != sample_rate or b.sample_rate != sample_rate:
                raise DataError(
                    f"pair {entry.path_a} rate {a.sample_rate} != configured {sample_rate}"
                )
            a = dsp.to_mono(a)
            b = dsp.to_mono(b)
            max_offset = a.num_samples // hop - excerpt_frames
            if max_offset < 0:
                raise DataError(
                    f"fragment {entry.path_a} too short for {excerpt_frames} frames"
                )
            mel_b = dsp.log_mel(b, mel_cfg).values
            self.items.append((a.samples, mel_b, f"{entry.piece}/{entry.direction}"))
        self.hop = hop

    def __len__(self) -> int:
        return len(self.items)

    def crop(self, index: int, offset: int) -> TrainingPair:
        target, mel, pair_id = self.items[index]
        frames = self.excerpt_frames
        return TrainingPair(
            target=target[offset * self.hop : (offset + frames) * self.hop],
            cond_mel=mel[offset : offset + frames],
            pair_id=pair_id,
        )

    def sample(self, rng: np.random.Generator) -> TrainingPair:
        index = int(rng.integers(0, len(self.items)))
        target, _, _ = self.items[index]
        max_offset = len(target) // self.hop - self.excerpt_frames
        offset = int(rng.integers(0, max_offset + 1))
        return self.crop(index, offset)

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for target, mel, pair_id in self.items:
            digest.update(pair_id.encode())
            digest.update(np.ascontiguousarray(target).tobytes())
            digest.update(np.ascontiguousarray(mel).tobytes())
        return digest.hexdigest()


def _batch_tensors(pairs: list[TrainingPair]):
    x0 = torch.from_numpy(np.stack([p.target for p in pairs]))
    mel = torch.from_numpy(np.stack([p.cond_mel.T for p in pairs]))
    return x0, mel


def denoiser_loss(model: DenoiserModel, pair: TrainingPair, eps: np.ndarray, level) -> torch.Tensor:
    """Mean absolute error between predicted and injected noise for one pair."""
    eps = np.asarray(eps, dtype=np.float32)
    if eps.shape != pair.target.shape:
        raise DataError("eps must match the target excerpt shape")
    lvl = float(level)
    x_noisy = diffusion.forward_diffuse(pair.target, lvl, eps)
    x0, mel = _batch_tensors([pair])
    xt = torch.from_numpy(x_noisy.astype(np.float32))[None, :]
    lt = torch.tensor([lvl], dtype=torch.float32)
    eps_hat = model.net(xt, mel, lt)
    return torch.mean(torch.abs(eps_hat - torch.from_numpy(eps)[None, :]))


def bddm_step_loss(
    frozen_eps,
    eps,
    alpha_bar,
    beta_hat,
    dims: int | None = None,
):
    """Schedule-network step objective.

    With ab = alpha_bar and bh = beta_hat (requiring 0 < bh < 1 - ab):

        1 / (2 (1 - bh - ab)) * || sqrt(1-ab) eps - bh / sqrt(1-ab) frozen_eps ||^2
        + 1/4 * log((1 - ab) / bh)
        + D/2 * (bh / (1 - ab) - 1)

    Differentiable w.r.t. ``beta_hat`` when given as a torch scalar. ``dims``
    defaults to the element count of the waveforms.
    """
    is_torch = torch.is_tensor(beta_hat) or torch.is_tensor(frozen_eps) or torch.is_tensor(eps)
    if is_torch:
        frozen_t = frozen_eps if torch.is_tensor(frozen_eps) else torch.as_tensor(frozen_eps)
        eps_t = eps if torch.is_tensor(eps) else torch.as_tensor(eps, dtype=frozen_t.dtype)
        bh = beta_hat if torch.is_tensor(beta_hat) else torch.as_tensor(beta_hat, dtype=frozen_t.dtype)
        ab = alpha_bar if torch.is_tensor(alpha_bar) else torch.as_tensor(alpha_bar, dtype=frozen_t.dtype)
        one_minus_ab = 1.0 - ab
        if float(bh) <= 0.0 or float(bh) >= float(one_minus_ab):
            raise NumericalError(
                f"beta_hat {float(bh)} outside the domain (0, 1 - alpha_bar = {float(one_minus_ab)})"
            )
        d = eps_t.numel() if dims is None else dims
        resid = torch.sqrt(one_minus_ab) * eps_t - bh / torch.sqrt(one_minus_ab) * frozen_t
        quad = torch.sum(resid * resid) / (2.0 * (one_minus_ab - bh))
        logterm = 0.25 * torch.log(one_minus_ab / bh)
        linterm = d / 2.0 * (bh / one_minus_ab - 1.0)
        return quad + logterm + linterm
    frozen_a = np.asarray(frozen_eps, dtype=np.float64)
    eps_a = np.asarray(eps, dtype=np.float64)
    ab = float(alpha_bar)
    bh = float(beta_hat)
    if not (0.0 < bh < 1.0 - ab):
        raise NumericalError(f"beta_hat {bh} outside the domain (0, 1 - alpha_bar = {1.0 - ab})")
    d = eps_a.size if dims is None else dims
    resid = math.sqrt(1.0 - ab) * eps_a - bh / math.sqrt(1.0 - ab) * frozen_a
    quad = float(np.sum(resid * resid)) / (2.0 * (1.0 - ab - bh))
    return quad + 0.25 * math.log((1.0 - ab) / bh) + d / 2.0 * (bh / (1.0 - ab) - 1.0)


def _write_loss_row(path: Path, step: int, loss: float, fresh: bool) -> None:
    mode = "w" if fresh else "a"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["step", "loss"])
        writer.writerow([step, f"{loss:.8e}"])


def _training_manifest(out_dir: Path, command: str, config: dict, seed: int, dataset_hash: str) -> None:
    canonical = json.dumps(config, sort_keys=True)
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "dataset_hash": dataset_hash,
    }
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def train_denoiser(
    config: TrainingConfig,
    dataset: PairDataset,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    out_dir,
    resume_from=None,
) -> list[Path]:
    """Optimize the denoiser; returns the checkpoint paths in order.

    Per step: sample a batch of crops, draw gaussian noise and a continuous
    noise level per item, diffuse the targets, minimize the mean absolute
    noise-prediction error with Adam. NaN loss aborts.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optimizer = torch.optim.Adam(
        model.net.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        weight_decay=config.weight_decay,
    )
    rng = np.random.default_rng(config.seed)
    start_step = 0
    if resume_from is not None:
        bundle, meta, blob = networks.load_checkpoint(resume_from)
        model.net.load_state_dict(bundle.net.state_dict())
        if "optimizer" not in blob:
            raise DataError("resume checkpoint lacks optimizer state")
        optimizer.load_state_dict(blob["optimizer"])
        rng.bit_generator.state = meta["rng_state"]
        start_step = meta["step"]
        model.step = start_step

    _training_manifest(out_dir, "train", asdict(config), config.seed, dataset.content_hash())
    loss_csv = out_dir / "loss.csv"
    checkpoints: list[Path] = []
    model.net.train()

    def _save(step: int) -> Path:
        model.step = step
        path = out_dir / f"ckpt_{step:07d}.pt"
        networks.save_checkpoint(
            path,
            model,
            seed=config.seed,
            optimizer=optimizer,
            rng_state=rng.bit_generator.state,
            train_schedule_betas=schedule.betas.tolist(),
        )
        checkpoints.append(path)
        return path

    for step in range(start_step + 1, config.max_steps + 1):
        pairs = [dataset.sample(rng) for _ in range(config.batch_size)]
        n = pairs[0].target.shape[0]
        eps = rng.standard_normal((config.batch_size, n)).astype(np.float32)
        levels = np.array(
            [float(diffusion.sample_noise_level(schedule, rng)) for _ in pairs],
            dtype=np.float32,
        )
        x0 = np.stack([p.target for p in pairs])
        x_noisy = levels[:, None] * x0 + np.sqrt(1.0 - levels[:, None] ** 2) * eps
        mel = torch.from_numpy(np.stack([p.cond_mel.T for p in pairs]))
        xt = torch.from_numpy(x_noisy)
        lt = torch.from_numpy(levels)
        optimizer.zero_grad(set_to_none=True)
        eps_hat = model.net(xt, mel, lt)
        loss = torch.mean(torch.abs(eps_hat - torch.from_numpy(eps)))
        loss_val = float(loss.detach())
        if not math.isfinite(loss_val):
            raise NumericalError(f"non-finite denoiser loss at step {step}")
        loss.backward()
        optimizer.step()
        if step == start_step + 1 or step % config.log_interval == 0 or step == config.max_steps:
            logger.info("denoiser step %d loss %.5f", step, loss_val)
        _write_loss_row(loss_csv, step, loss_val, fresh=(step == 1))
        if step % config.checkpoint_interval == 0 or step == config.max_steps:
            _save(step)
    model.net.eval()
    return checkpoints


@dataclass(frozen=True)
class SchedulerTrainingConfig:
    steps: int = 10000
    learning_rate: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    log_interval: int = 200

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise DataError("scheduler training config values must be positive")


def train_schedule_network(
    config: SchedulerTrainingConfig,
    frozen_denoiser: DenoiserModel,
    dataset: PairDataset,
    net: ScheduleNetwork,
    schedule: NoiseSchedule,
    out_dir,
) -> ScheduleNetwork:
    """Optimize the schedule network against the frozen denoiser.

    Per step: draw crops and a step index t, diffuse to alpha_bar_t, take the
    previous noise scale from the training schedule's beta_{t+1}, predict
    beta_hat and minimize the step objective. The denoiser is asserted
    unchanged by checksum.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(schedule) < 2:
        raise DataError("training schedule too short for scheduler training")
    frozen_checksum = networks.state_checksum(frozen_denoiser.net)
    frozen_denoiser.net.eval()
    optimizer = torch.optim.Adam(net.net.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    _training_manifest(
        out_dir, "train-scheduler", asdict(config), config.seed, dataset.content_hash()
    )
    loss_csv = out_dir / "loss.csv"
    net.net.train()

    for step in range(1, config.steps + 1):
        optimizer.zero_grad(set_to_none=True)
        total = None
        for _ in range(config.batch_size):
            pair = dataset.sample(rng)
            t = int(rng.integers(1, len(schedule)))  # beta_{t+1} must exist
            alpha_bar_t = schedule.alpha_bar(t)
            beta_next = float(schedule.betas[t])
            eps = rng.standard_normal(pair.target.shape[0]).astype(np.float32)
            x_t = diffusion.forward_diffuse(pair.target, math.sqrt(alpha_bar_t), eps)
            xt = torch.from_numpy(x_t.astype(np.float32))[None, :]
            mel = torch.from_numpy(pair.cond_mel.T[None, :, :])
            lt = torch.tensor([math.sqrt(alpha_bar_t)], dtype=torch.float32)
            with torch.no_grad():
                eps_star = frozen_denoiser.net(xt, mel, lt)[0]
            beta_hat = networks.schedule_net_predict(net, xt[0], beta_next, alpha_bar_t)
            item = bddm_step_loss(eps_star, torch.from_numpy(eps), alpha_bar_t, beta_hat)
            total = item if total is None else total + item
        loss = total / config.batch_size
        loss_val = float(loss.detach())
        if not math.isfinite(loss_val):
            raise NumericalError(f"non-finite scheduler loss at step {step}")
        loss.backward()
        optimizer.step()
        if step == 1 or step % config.log_interval == 0 or step == config.steps:
            logger.info("scheduler step %d loss %.5f", step, loss_val)
        _write_loss_row(loss_csv, step, loss_val, fresh=(step == 1))

    if networks.state_checksum(frozen_denoiser.net) != frozen_checksum:
        raise NumericalError("frozen denoiser parameters changed during scheduler training")
    net.step = config.steps
    net.net.eval()
    networks.save_checkpoint(
        out_dir / f"scheduler_{config.steps:07d}.pt",
        net,
        seed=config.seed,
        train_schedule_betas=schedule.betas.tolist(),
    )
    return net

"""Learnable components: the mel-conditioned noise predictor and the schedule
network, plus checkpoint I/O.

Denoiser layout (documented because the closed-form parameter count in the
tests and README is derived from it):

* audio path: ``Conv1d(1, d0, 5)`` stem, then five downsampling blocks with
  factors equal to the reversed upsampling factors. Each block is
  avg-pool -> conv3 -> conv3(dilation 2) with a 1x1 skip, both branches
  summed and scaled by 1/sqrt(2).
* mel path: ``Conv1d(n_mels, u0, 3)`` stem, then five upsampling blocks
  (factors multiply to the mel hop, 5*5*3*2*2 = 300 by default). Each block
  nearest-upsamples, applies conv3, a FiLM modulation, conv3(dilation 2),
  plus a 1x1 skip.
* FiLM couplers: one per upsampling stage plus one on the mel stem. Each
  combines the audio feature at the matching resolution with the noise-level
  embedding through zero-initialized projections producing (scale, shift);
  modulation is ``(1 + scale) * h + shift``, an exact identity at init.
* noise level: sinusoidal features of the continuous level sqrt(alpha_bar)
  passed through a 2-layer MLP.

The schedule network is a GALR stack: the waveform is cut into non-overlapping
frames of ``window_length`` samples, linearly embedded, grouped into segments
of ``segment_size`` frames; each block runs a bidirectional LSTM within
segments and multi-head self-attention across segments. The pooled feature,
concatenated with the previous noise scale, feeds a small head whose sigmoid
output is clamped to [1e-6, 1 - 1e-6] so the predicted ratio is strictly
inside (0, 1) for any finite input.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dsp import MelFeatureConfig, MelSpectrogram
from .errors import DataError

CHECKPOINT_SCHEMA_VERSION = 1
_SQRT2 = math.sqrt(2.0)
_RATIO_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    """Denoiser architecture spec; presets: toy (desk-scale) and full."""

    upsample_factors: tuple[int, ...] = (5, 5, 3, 2, 2)
    down_channels: tuple[int, ...] = (8, 12, 16, 24, 32, 40)
    up_channels: tuple[int, ...] = (64, 48, 32, 24, 16, 8)
    noise_emb_dim: int = 32
    mel_bands: int = 128
    # fixed affine standardization of the log-mel input: (mel + offset) / scale
    mel_norm_offset: float = 5.0
    mel_norm_scale: float = 4.0
    preset: str = "toy"

    def __post_init__(self):
        object.__setattr__(self, "upsample_factors", tuple(self.upsample_factors))
        object.__setattr__(self, "down_channels", tuple(self.down_channels))
        object.__setattr__(self, "up_channels", tuple(self.up_channels))
        n = len(self.upsample_factors)
        if len(self.down_channels) != n + 1 or len(self.up_channels) != n + 1:
            raise DataError("channel plans must have one more entry than the factor list")
        if self.noise_emb_dim % 2 != 0:
            raise DataError("noise_emb_dim must be even")

    @property
    def total_upsampling(self) -> int:
        return int(np.prod(self.upsample_factors))

    @classmethod
    def toy(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def full(cls) -> "ModelConfig":
        return cls(
            down_channels=(32, 128, 128, 256, 512, 512),
            up_channels=(768, 512, 512, 256, 128, 128),
            noise_emb_dim=128,
            preset="full",
        )

    @classmethod
    def from_preset(cls, name: str) -> "ModelConfig":
        if name == "toy":
            return cls.toy()
        if name == "full":
            return cls.full()
        raise DataError(f"unknown model preset {name!r}")


@dataclass(frozen=True)
class ScheduleNetConfig:
    """GALR schedule-network spec."""

    hidden_dim: int = 128
    window_length: int = 8
    segment_size: int = 64
    num_blocks: int = 1
    attn_heads: int = 4

    def __post_init__(self):
        if self.hidden_dim % (2 * self.attn_heads) != 0:
            raise DataError("hidden_dim must be divisible by 2*attn_heads")


class NoiseLevelEmbedding(nn.Module):
    def __init__(self, dim: int, scale: float = 5000.0):
        super().__init__()
        half = dim // 2
        exponents = 1e-4 ** (torch.arange(half, dtype=torch.float32) / half)
        self.register_buffer("exponents", exponents)
        self.scale = scale
        self.lin1 = nn.Linear(dim, dim)
        self.lin2 = nn.Linear(dim, dim)

    def forward(self, level):
        x = self.scale * level[:, None] * self.exponents[None, :]
        feats = torch.cat([torch.sin(x), torch.cos(x)], dim=-1)
        return F.silu(self.lin2(F.silu(self.lin1(feats))))


class FilmCoupler(nn.Module):
    """Produces (scale, shift) from an audio-path feature and the noise embedding.

    Zero-initialized so the modulation (1 + scale) * h + shift starts as the
    identity.
    """

    def __init__(self, feat_channels: int, out_channels: int, emb_dim: int):
        super().__init__()
        self.conv = nn.Conv1d(feat_channels, 2 * out_channels, 3, padding=1)
        self.lin = nn.Linear(emb_dim, 2 * out_channels)
        for layer in (self.conv, self.lin):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, feat, emb):
        h = self.conv(feat) + self.lin(emb)[:, :, None]
        return h.chunk(2, dim=1)


class DBlock(nn.Module):
    def __init__(self, cin: int, cout: int, factor: int):
        super().__init__()
        self.pool = nn.AvgPool1d(factor)
        self.conv1 = nn.Conv1d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv1d(cout, cout, 3, padding=2, dilation=2)
        self.skip = nn.Conv1d(cin, cout, 1)

    def forward(self, x):
        h = self.pool(x)
        m = self.conv2(F.silu(self.conv1(F.silu(h))))
        return (m + self.skip(h)) / _SQRT2


class UBlock(nn.Module):
    def __init__(self, cin: int, cout: int, factor: int, feat_channels: int, emb_dim: int):
        super().__init__()
        self.factor = factor
        self.conv1 = nn.Conv1d(cin, cout, 3, padding=1)
        self.film = FilmCoupler(feat_channels, cout, emb_dim)
        self.conv2 = nn.Conv1d(cout, cout, 3, padding=2, dilation=2)
        self.skip = nn.Conv1d(cin, cout, 1)

    def forward(self, x, feat, emb, modulate: bool = True):
        h = x.repeat_interleave(self.factor, dim=2)
        m = self.conv1(F.silu(h))
        if modulate:
            scale, shift = self.film(feat, emb)
            m = (1.0 + scale) * m + shift
        m = self.conv2(F.silu(m))
        return (m + self.skip(h)) / _SQRT2


class DenoiserNet(nn.Module):
    """Predicts the injected noise from (noisy audio, mel condition, level)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d_ch, u_ch = cfg.down_channels, cfg.up_channels
        down_factors = tuple(reversed(cfg.upsample_factors))
        self.noise_emb = NoiseLevelEmbedding(cfg.noise_emb_dim)
        self.audio_stem = nn.Conv1d(1, d_ch[0], 5, padding=2)
        self.dblocks = nn.ModuleList(
            DBlock(d_ch[i], d_ch[i + 1], down_factors[i]) for i in range(len(down_factors))
        )
        self.mel_stem = nn.Conv1d(cfg.mel_bands, u_ch[0], 3, padding=1)
        self.film0 = FilmCoupler(d_ch[-1], u_ch[0], cfg.noise_emb_dim)
        n_up = len(cfg.upsample_factors)
        self.ublocks = nn.ModuleList(
            UBlock(u_ch[i], u_ch[i + 1], cfg.upsample_factors[i], d_ch[n_up - 1 - i], cfg.noise_emb_dim)
            for i in range(n_up)
        )
        self.head = nn.Conv1d(u_ch[-1], 1, 3, padding=1)

    def forward(self, audio, mel, level, modulate: bool = True):
        # audio [B, L], mel [B, n_mels, frames], level [B]; L = frames * prod(factors)
        if audio.shape[1] != mel.shape[2] * self.cfg.total_upsampling:
            raise DataError(
                f"waveform length {audio.shape[1]} does not equal "
                f"{mel.shape[2]} frames * {self.cfg.total_upsampling}"
            )
        emb = self.noise_emb(level)
        d = [self.audio_stem(audio[:, None, :])]
        for blk in self.dblocks:
            d.append(blk(d[-1]))
        u = self.mel_stem((mel + self.cfg.mel_norm_offset) / self.cfg.mel_norm_scale)
        if modulate:
            scale, shift = self.film0(d[-1], emb)
            u = (1.0 + scale) * u + shift
        n = len(self.ublocks)
        for i, blk in enumerate(self.ublocks):
            u = blk(u, d[n - 1 - i], emb, modulate=modulate)
        return self.head(F.silu(u))[:, 0, :]


class GalrBlock(nn.Module):
    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.lstm = nn.LSTM(hidden, hidden // 2, batch_first=True, bidirectional=True)
        self.lstm_norm = nn.LayerNorm(hidden)
        self.attn = nn.MultiheadAttention(hidden, heads, batch_first=True)
        self.attn_norm = nn.LayerNorm(hidden)

    def forward(self, x):
        # x [B, S, K, H]: S segments of K frames
        b, s, k, h = x.shape
        local = x.reshape(b * s, k, h)
        local, _ = self.lstm(local)
        x = self.lstm_norm(x + local.reshape(b, s, k, h))
        glob = x.permute(0, 2, 1, 3).reshape(b * k, s, h)
        glob, _ = self.attn(glob, glob, glob, need_weights=False)
        glob = glob.reshape(b, k, s, h).permute(0, 2, 1, 3)
        return self.attn_norm(x + glob)


class ScheduleNet(nn.Module):
    """Maps (noisy waveform, previous noise scale) to a ratio in (0, 1)."""

    def __init__(self, cfg: ScheduleNetConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.window_length, cfg.hidden_dim)
        self.norm_in = nn.LayerNorm(cfg.hidden_dim)
        self.blocks = nn.ModuleList(
            GalrBlock(cfg.hidden_dim, cfg.attn_heads) for _ in range(cfg.num_blocks)
        )
        self.head1 = nn.Linear(cfg.hidden_dim + 1, cfg.hidden_dim)
        self.head2 = nn.Linear(cfg.hidden_dim, 1)

    def forward(self, x, beta_next):
        # x [B, L], beta_next [B]
        b, length = x.shape
        win, seg = self.cfg.window_length, self.cfg.segment_size
        n_frames = -(-length // win)
        pad = n_frames * win - length
        if pad:
            x = F.pad(x, (0, pad))
        frames = x.reshape(b, n_frames, win)
        h = self.norm_in(self.embed(frames))
        n_seg = -(-n_frames // seg)
        pad_f = n_seg * seg - n_frames
        if pad_f:
            h = F.pad(h, (0, 0, 0, pad_f))
        h = h.reshape(b, n_seg, seg, self.cfg.hidden_dim)
        for blk in self.blocks:
            h = blk(h)
        pooled = h.mean(dim=(1, 2))
        z = F.silu(self.head1(torch.cat([pooled, beta_next[:, None]], dim=1)))
        ratio = torch.sigmoid(self.head2(z))[:, 0]
        return torch.clamp(ratio, _RATIO_EPS, 1.0 - _RATIO_EPS)


@dataclass
class DenoiserModel:
    """Denoiser parameters plus everything needed to run them on audio."""

    net: DenoiserNet
    config: ModelConfig
    mel_config: MelFeatureConfig
    sample_rate: int
    step: int = 0

    def __post_init__(self):
        if self.config.total_upsampling != self.mel_config.hop_length:
            raise DataError(
                f"upsampling factors multiply to {self.config.total_upsampling}, "
                f"mel hop is {self.mel_config.hop_length}"
            )
        if self.config.mel_bands != self.mel_config.n_mels:
            raise DataError("model mel_bands must match mel config n_mels")


@dataclass
class ScheduleNetwork:
    net: ScheduleNet
    config: ScheduleNetConfig
    step: int = 0


def build_denoiser(
    model_cfg: ModelConfig,
    mel_cfg: MelFeatureConfig,
    sample_rate: int,
    seed: int = 0,
) -> DenoiserModel:
    torch.manual_seed(seed)
    return DenoiserModel(
        net=DenoiserNet(model_cfg), config=model_cfg, mel_config=mel_cfg, sample_rate=sample_rate
    )


def build_schedule_network(cfg: ScheduleNetConfig, seed: int = 0) -> ScheduleNetwork:
    torch.manual_seed(seed)
    return ScheduleNetwork(net=ScheduleNet(cfg), config=cfg)


def _mel_values(mel) -> np.ndarray:
    if isinstance(mel, MelSpectrogram):
        return mel.values
    return np.asarray(mel)


def denoiser_predict(model, x_noisy, mel, level):
    """Noise estimate for one clip.

    ``model`` is either a :class:`DenoiserModel` (numpy in, numpy out,
    gradient-free; or torch tensors in, differentiable torch out) or any
    callable ``(x, mel_values, level) -> waveform`` (test harnesses), which
    receives the inputs unchanged.
    """
    lvl = float(level)
    if not (0.0 < lvl < 1.0):
        raise DataError(f"noise level must be in (0, 1), got {lvl}")
    if isinstance(model, DenoiserModel):
        if torch.is_tensor(x_noisy):
            return model.net(x_noisy, mel, level if torch.is_tensor(level) else torch.full(
                (x_noisy.shape[0],), lvl, dtype=x_noisy.dtype))
        values = _mel_values(mel)
        x = np.asarray(x_noisy)
        if x.ndim != 1 or values.ndim != 2:
            raise DataError("expected 1-D waveform and frames x n_mels mel")
        if x.shape[0] != values.shape[0] * model.config.total_upsampling:
            raise DataError(
                f"waveform length {x.shape[0]} misaligned with {values.shape[0]} mel frames"
            )
        was_training = model.net.training
        model.net.eval()
        try:
            with torch.no_grad():
                xt = torch.from_numpy(x.astype(np.float32))[None, :]
                mt = torch.from_numpy(values.astype(np.float32).T)[None, :, :]
                lt = torch.tensor([lvl], dtype=torch.float32)
                out = model.net(xt, mt, lt)
        finally:
            model.net.train(was_training)
        eps = out[0].numpy()
        if not np.all(np.isfinite(eps)):
            raise DataError("denoiser produced non-finite output")
        return eps
    if callable(model):
        return np.asarray(model(x_noisy, _mel_values(mel), lvl))
    raise DataError(f"unsupported denoiser object {type(model)!r}")


def schedule_net_predict(net, x_noisy, beta_next: float, alpha_bar: float):
    """Next noise scale: ratio(x, beta_next) * min(beta_next, 1 - alpha_bar).

    Strictly inside (0, min(beta_next, 1 - alpha_bar)) by construction.
    Torch tensor input keeps the result differentiable; numpy input returns a
    float.
    """
    if not (0.0 < beta_next < 1.0):
        raise DataError(f"beta_next must be in (0, 1), got {beta_next}")
    if not (0.0 < alpha_bar < 1.0):
        raise DataError(f"alpha_bar must be in (0, 1), got {alpha_bar}")
    module = net.net if isinstance(net, ScheduleNetwork) else net
    bound = min(beta_next, 1.0 - alpha_bar)
    if torch.is_tensor(x_noisy):
        x = x_noisy if x_noisy.ndim == 2 else x_noisy[None, :]
        bn = torch.full((x.shape[0],), beta_next, dtype=x.dtype, device=x.device)
        ratio = module(x, bn)
        out = ratio * bound
        return out if x_noisy.ndim == 2 else out[0]
    x = np.asarray(x_noisy, dtype=np.float32)
    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            xt = torch.from_numpy(x)[None, :]
            bn = torch.tensor([beta_next], dtype=torch.float32)
            ratio = float(module(xt, bn)[0])
    finally:
        module.train(was_training)
    return ratio * bound


def param_count(model) -> int:
    """Number of scalar learnable parameters."""
    module = model
    if isinstance(model, (DenoiserModel, ScheduleNetwork)):
        module = model.net
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(
    path,
    bundle,
    *,
    seed: int | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    rng_state: dict | None = None,
    train_schedule_betas: list[float] | None = None,
    extra: dict | None = None,
) -> None:
    """Binary tensor blob at ``path`` plus a JSON sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {"state_dict": bundle.net.state_dict()}
    if optimizer is not None:
        blob["optimizer"] = optimizer.state_dict()
    torch.save(blob, path)
    if isinstance(bundle, DenoiserModel):
        meta = {
            "kind": "denoiser",
            "arch": asdict(bundle.config),
            "mel_config": asdict(bundle.mel_config),
            "sample_rate": bundle.sample_rate,
        }
    elif isinstance(bundle, ScheduleNetwork):
        meta = {"kind": "scheduler", "arch": asdict(bundle.config)}
    else:
        raise DataError(f"cannot checkpoint object of type {type(bundle)!r}")
    meta.update(
        {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "step": bundle.step,
            "seed": seed,
            "rng_state": rng_state,
            "train_schedule_betas": train_schedule_betas,
        }
    )
    if extra:
        meta.update(extra)
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)


def load_checkpoint(path):
    """Returns (bundle, meta, blob); blob keeps the optimizer state if saved."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    sidecar = _sidecar_path(path)
    if not sidecar.is_file():
        raise DataError(f"checkpoint sidecar not found: {sidecar}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise DataError(f"unsupported checkpoint schema {meta.get('schema_version')}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if meta["kind"] == "denoiser":
        cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["arch"].items()})
        bundle = DenoiserModel(
            net=DenoiserNet(cfg),
            config=cfg,
            mel_config=MelFeatureConfig(**meta["mel_config"]),
            sample_rate=meta["sample_rate"],
            step=meta["step"],
        )
    elif meta["kind"] == "scheduler":
        cfg = ScheduleNetConfig(**meta["arch"])
        bundle = ScheduleNetwork(net=ScheduleNet(cfg), config=cfg, step=meta["step"])
    else:
        raise DataError(f"unknown checkpoint kind {meta.get('kind')!r}")
    bundle.net.load_state_dict(blob["state_dict"])
    return bundle, meta, blob


def state_checksum(module: nn.Module) -> str:
    """Order-stable hash of all parameter bytes; used to assert frozen models."""
    import hashlib

    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()

"""Noise-schedule arithmetic and the forward/reverse diffusion kernels.

All kernels are pure functions over numpy arrays and preserve the dtype of
their waveform arguments, so float64 inputs get float64 math (the identity
tests rely on this). Randomness is always drawn from an explicitly passed
``numpy.random.Generator``.

Schedule conventions: ``alpha_t = 1 - beta_t``, ``alpha_bar_t`` is the
cumulative product of alphas, and ``alpha_bar_0 = 1`` so the final reverse
step (n=1) has zero posterior variance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

SCHEDULE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class NoiseSchedule:
    """Ordered beta sequence with derived alpha products."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise DataError("schedule needs at least one beta")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise DataError("all betas must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    def __len__(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t with the alpha_bar_0 = 1 convention; t in [0, T]."""
        if not 0 <= t <= len(self):
            raise DataError(f"step index {t} outside [0, {len(self)}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def to_json(self) -> str:
        return json.dumps(
            {"schema_version": SCHEDULE_SCHEMA_VERSION, "betas": self.betas.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "NoiseSchedule":
        doc = json.loads(text)
        return cls(betas=np.asarray(doc["betas"], dtype=np.float64))


@dataclass(frozen=True)
class NoiseLevel:
    """Continuous noise level sqrt(alpha_bar), strictly inside (0, 1)."""

    value: float

    def __post_init__(self):
        if not (0.0 < self.value < 1.0):
            raise DataError(f"noise level must be in (0, 1), got {self.value}")

    def __float__(self) -> float:
        return self.value


@dataclass
class DiffusionState:
    """Waveform being denoised, its step index n, and the governing schedule."""

    x: np.ndarray
    n: int
    schedule: NoiseSchedule

    def __post_init__(self):
        self.x = np.asarray(self.x)
        if not np.all(np.isfinite(self.x)):
            raise NumericalError("diffusion state contains non-finite values")
        if not 0 <= self.n <= len(self.schedule):
            raise DataError(f"step index {self.n} outside [0, {len(self.schedule)}]")


def linear_beta_schedule(
    t_count: int, beta_start: float = 1e-4, beta_end: float = 0.005
) -> NoiseSchedule:
    """Betas linearly spaced from beta_start to beta_end inclusive."""
    if t_count < 1:
        raise DataError("t_count must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise DataError("need 0 < beta_start <= beta_end < 1")
    if t_count == 1:
        betas = np.asarray([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, t_count, dtype=np.float64)
    return NoiseSchedule(betas=betas)


def _as_level(level) -> float:
    value = float(level)
    if not (0.0 < value < 1.0):
        raise DataError(f"noise level must be in (0, 1), got {value}")
    return value


def forward_diffuse(x0: np.ndarray, level, eps: np.ndarray) -> np.ndarray:
    """Closed-form perturbation: sqrt(ab) * x0 + sqrt(1 - ab) * eps.

    ``level`` is the continuous noise level sqrt(alpha_bar).
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise DataError(f"x0 and eps shapes differ: {x0.shape} vs {eps.shape}")
    s = _as_level(level)
    return s * x0 + np.sqrt(1.0 - s * s) * eps


def sample_noise_level(schedule: NoiseSchedule, rng: np.random.Generator) -> NoiseLevel:
    """Continuous noise level: t uniform in {1..T}, then uniform in
    (sqrt(alpha_bar_t), sqrt(alpha_bar_{t-1}))."""
    t = int(rng.integers(1, len(schedule) + 1))
    hi = np.sqrt(schedule.alpha_bar(t - 1))
    lo = np.sqrt(schedule.alpha_bar(t))
    u = rng.uniform(lo, hi)
    # Guard the open-interval contract against u == bounds at float precision.
    u = min(max(u, np.nextafter(lo, 1.0)), np.nextafter(hi, 0.0))
    return NoiseLevel(float(u))


def posterior_sigma(schedule: NoiseSchedule, n: int, mode: str = "posterior") -> float:
    """Reverse-step noise scale sigma_n.

    ``posterior``: sigma_n^2 = (1 - alpha_bar_{n-1}) / (1 - alpha_bar_n) * beta_n,
    which is 0 at n=1 because alpha_bar_0 = 1. ``simple``: sigma_n^2 = beta_n.
    """
    if not 1 <= n <= len(schedule):
        raise DataError(f"step index {n} outside [1, {len(schedule)}]")
    beta_n = float(schedule.betas[n - 1])
    if mode == "simple":
        return float(np.sqrt(beta_n))
    if mode != "posterior":
        raise DataError(f"unknown sigma mode {mode!r}")
    num = 1.0 - schedule.alpha_bar(n - 1)
    den = 1.0 - schedule.alpha_bar(n)
    return float(np.sqrt(num / den * beta_n))


def reverse_step(
    state: DiffusionState,
    eps_hat: np.ndarray,
    z: np.ndarray,
    sigma_mode: str = "posterior",
) -> DiffusionState:
    """One ancestral reverse step from x_n to x_{n-1}.

    x_{n-1} = (x_n - (1-alpha_n)/sqrt(1-alpha_bar_n) * eps_hat) / sqrt(alpha_n)
              + sigma_n * z
    with z required to be all-zero at n=1.
    """
    eps_hat = np.asarray(eps_hat)
    z = np.asarray(z)
    if eps_hat.shape != state.x.shape or z.shape != state.x.shape:
        raise DataError("eps_hat and z must match the state waveform shape")
    n = state.n
    if not 1 <= n <= len(state.schedule):
        raise DataError(f"cannot reverse-step from n={n}")
    if n == 1 and np.any(z != 0.0):
        raise DataError("z must be all-zero at the final reverse step (n=1)")
    sched = state.schedule
    alpha_n = float(sched.alphas[n - 1])
    alpha_bar_n = sched.alpha_bar(n)
    coeff = (1.0 - alpha_n) / np.sqrt(1.0 - alpha_bar_n)
    sigma = posterior_sigma(sched, n, mode=sigma_mode)
    x_prev = (state.x - coeff * eps_hat) / np.sqrt(alpha_n) + sigma * z
    return DiffusionState(x=x_prev, n=n - 1, schedule=sched)

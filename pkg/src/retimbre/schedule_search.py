"""Short inference-schedule generation, scoring and selection.

The schedule network walks the noise trajectory from its noisiest end: given
the current cumulative alpha product and the previous noise scale, it emits
the next smaller beta, the bookkeeping divides the alpha product by (1 - beta)
to move one step cleaner, and the walk stops at a beta floor or the step cap.
Collected betas are reversed so the stored schedule reads in sampling order
(ascending noise along the inference traversal).

A fixed 6-step baseline schedule is shipped alongside; its values are the
widely used WaveGrad-lineage 6-iteration schedule and are pinned here as the
repo's baseline definition.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule
from .errors import DataError
from .networks import DenoiserModel, ScheduleNetwork, schedule_net_predict
from .training import TrainingPair

logger = logging.getLogger(__name__)

SCHEDULE_FILE_SCHEMA_VERSION = 1
WG6_BETAS = (0.0001, 0.001, 0.01, 0.05, 0.2, 0.5)
DEFAULT_ALPHA_BAR_INITS = (0.1, 0.3, 0.5)
DEFAULT_BETA_INITS = (0.1, 0.3, 0.5)


@dataclass(frozen=True)
class InferenceSchedule:
    """Short beta sequence in sampling order, with provenance."""

    betas: tuple[float, ...]
    provenance: str
    score: float | None = None
    stop_reason: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.betas) < 1:
            raise DataError("inference schedule needs at least one beta")
        for b in self.betas:
            if not (0.0 < b < 1.0):
                raise DataError(f"inference beta {b} outside (0, 1)")

    def __len__(self) -> int:
        return len(self.betas)

    def as_noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule(betas=np.asarray(self.betas, dtype=np.float64))

    def to_json(self, config_hash: str | None = None) -> str:
        return json.dumps(
            {
                "schema_version": SCHEDULE_FILE_SCHEMA_VERSION,
                "betas": list(self.betas),
                "provenance": self.provenance,
                "score": self.score,
                "stop_reason": self.stop_reason,
                "config_hash": config_hash,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "InferenceSchedule":
        doc = json.loads(text)
        return cls(
            betas=tuple(doc["betas"]),
            provenance=doc.get("provenance", "manual"),
            score=doc.get("score"),
            stop_reason=doc.get("stop_reason"),
        )

    def save(self, path, config_hash: str | None = None) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json(config_hash))

    @classmethod
    def load(cls, path) -> "InferenceSchedule":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class SearchGrid:
    """Initial conditions for schedule generation."""

    alpha_bar_inits: tuple[float, ...] = DEFAULT_ALPHA_BAR_INITS
    beta_inits: tuple[float, ...] = DEFAULT_BETA_INITS
    max_steps: int = 20
    beta_min: float = 1e-4
    include_edge_beta: bool = True  # adds 0.9 * (1 - alpha_bar_init) per row

    def __post_init__(self):
        if not self.alpha_bar_inits or not self.beta_inits:
            raise DataError("search grid must be non-empty")
        if self.max_steps < 1:
            raise DataError("max_steps must be >= 1")

    def points(self) -> list[tuple[float, float]]:
        pts = []
        for ab in self.alpha_bar_inits:
            betas = list(self.beta_inits)
            if self.include_edge_beta:
                betas.append(0.9 * (1.0 - ab))
            for b in betas:
                if 0.0 < b < 1.0 - ab:
                    pts.append((ab, b))
        if not pts:
            raise DataError("no valid grid points: every beta_init >= 1 - alpha_bar_init")
        return pts


def wg6_schedule() -> InferenceSchedule:
    """The fixed 6-iteration baseline schedule."""
    return InferenceSchedule(betas=WG6_BETAS, provenance="WG-6")


def generate_schedule(
    net: ScheduleNetwork,
    init: tuple[float, float],
    val_excerpt: TrainingPair,
    max_steps: int = 20,
    beta_min: float = 1e-4,
    seed: int = 0,
) -> InferenceSchedule:
    """Walk the schedule network from a noisy initial condition.

    ``init`` is (alpha_bar_init, beta_init) with 0 < beta_init <
    1 - alpha_bar_init. The validation excerpt is re-noised to the current
    alpha product before each query so the network sees realistic inputs.
    """
    alpha_bar, beta_prev = float(init[0]), float(init[1])
    if not (0.0 < alpha_bar < 1.0):
        raise DataError(f"alpha_bar_init must be in (0, 1), got {alpha_bar}")
    if not (0.0 < beta_prev < 1.0 - alpha_bar):
        raise DataError(
            f"beta_init must be in (0, 1 - alpha_bar_init), got {beta_prev}"
        )
    rng = np.random.default_rng(seed)
    x0 = val_excerpt.target.astype(np.float64)
    betas_noisiest_first: list[float] = []
    stop_reason = "max_steps"
    for _ in range(max_steps):
        eps = rng.standard_normal(x0.shape[0])
        x_t = math.sqrt(alpha_bar) * x0 + math.sqrt(1.0 - alpha_bar) * eps
        beta_hat = schedule_net_predict(net, x_t.astype(np.float32), beta_prev, alpha_bar)
        if beta_hat < beta_min:
            stop_reason = "beta_min"
            break
        betas_noisiest_first.append(beta_hat)
        alpha_bar = alpha_bar / (1.0 - beta_hat)
        if alpha_bar >= 1.0:
            stop_reason = "alpha_bar_saturated"
            break
        beta_prev = beta_hat
    if not betas_noisiest_first:
        raise DataError(
            f"degenerate init {init}: first predicted beta below beta_min={beta_min}"
        )
    betas = tuple(reversed(betas_noisiest_first))
    sched = InferenceSchedule(
        betas=betas, provenance=f"BDDM-{len(betas)}", stop_reason=stop_reason
    )
    logger.info(
        "generated %s from init (%.3g, %.3g), stop=%s",
        sched.provenance,
        init[0],
        init[1],
        stop_reason,
    )
    return sched


@dataclass
class ScoredSchedule:
    schedule: InferenceSchedule
    score: float | None
    error: str | None = None


@dataclass
class SelectionResult:
    best: InferenceSchedule
    scored: list[ScoredSchedule] = field(default_factory=list)


def select_best_schedule(
    candidates: list[InferenceSchedule],
    model: DenoiserModel,
    val_set: list,
    scorer,
    generate_fn=None,
) -> SelectionResult:
    """Run inference per candidate, score the generated sets, return argmin.

    ``scorer`` maps a list of generated clips to a real number, lower better.
    Ties break toward fewer steps, then the lexicographically smaller beta
    sequence. Candidates whose inference fails are disqualified with a log
    line; it is an error only if all fail.
    """
    if not candidates:
        raise DataError("need at least one candidate schedule")
    if generate_fn is None:
        from .inference import transfer_timbre

        def generate_fn(schedule, cond, seed):
            return transfer_timbre(model, cond, schedule, seed=seed)

    scored: list[ScoredSchedule] = []
    for idx, cand in enumerate(candidates):
        try:
            outputs = [generate_fn(cand, cond, seed) for seed, cond in enumerate(val_set)]
            score = float(scorer(outputs))
        except Exception as exc:  # disqualify, keep searching
            logger.warning("candidate %s disqualified: %s", cand.provenance, exc)
            scored.append(ScoredSchedule(schedule=cand, score=None, error=str(exc)))
            continue
        logger.info("candidate %s (N=%d) scored %.6f", cand.provenance, len(cand), score)
        scored.append(ScoredSchedule(schedule=cand, score=score))
    valid = [s for s in scored if s.score is not None]
    if not valid:
        raise DataError("every candidate schedule failed inference")
    best = min(valid, key=lambda s: (s.score, len(s.schedule), s.schedule.betas))
    chosen = InferenceSchedule(
        betas=best.schedule.betas,
        provenance=best.schedule.provenance,
        score=best.score,
        stop_reason=best.schedule.stop_reason,
    )
    return SelectionResult(best=chosen, scored=scored)


def run_grid_search(
    net: ScheduleNetwork,
    grid: SearchGrid,
    val_excerpt: TrainingPair,
    seed: int = 0,
) -> list[InferenceSchedule]:
    """Generate one candidate per grid point; duplicates collapsed."""
    candidates: list[InferenceSchedule] = []
    seen = set()
    for ab, b in grid.points():
        try:
            cand = generate_schedule(
                net, (ab, b), val_excerpt, max_steps=grid.max_steps,
                beta_min=grid.beta_min, seed=seed,
            )
        except DataError as exc:
            logger.warning("grid point (%.3g, %.3g) degenerate: %s", ab, b, exc)
            continue
        if cand.betas not in seen:
            seen.add(cand.betas)
            candidates.append(cand)
    if not candidates:
        raise DataError("schedule search produced no candidates")
    return candidates

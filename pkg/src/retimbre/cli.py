"""Batch command suite tying the pipeline together.

Subcommands: synth-toy, prepare, train, train-scheduler, search-schedule,
infer, evaluate, bench. All read one JSON run config; paths and the training
regime stay on the command line. Every artifact-producing run writes a
run_manifest.json with the config hash and seed. Exit codes: 0 success,
1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from contextlib import contextmanager
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import data_toolkit, diffusion, dsp, evaluation, inference, networks, schedule_search, training
from .config import RunConfig, config_hash, load_config
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


@contextmanager
def _cleanup_on_failure(*paths):
    """Remove outputs this run created if it fails partway."""
    pre_existing = {str(p): Path(p).exists() for p in paths}
    try:
        yield
    except BaseException:
        for p, existed in pre_existing.items():
            target = Path(p)
            if not existed and target.exists():
                if target.is_dir():
                    shutil.rmtree(target, ignore_errors=True)
                else:
                    target.unlink(missing_ok=True)
        raise


def _write_run_manifest(out_dir: Path, command: str, cfg: RunConfig, extra: dict | None = None):
    doc = {
        "schema_version": 1,
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
    }
    if extra:
        doc.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _load_cfg(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    return load_config(args.config)


def _resolve_schedule(spec: str) -> schedule_search.InferenceSchedule:
    if spec == "wg6":
        return schedule_search.wg6_schedule()
    return schedule_search.InferenceSchedule.load(spec)


def _training_dataset(cfg: RunConfig, manifest_path, regime: str, split: str = "train"):
    manifest = data_toolkit.PairManifest.load(manifest_path)
    entries = [e for e in manifest.filter_regime(regime) if e.split == split]
    if not entries:
        raise DataError(f"no {split!r} entries for regime {regime!r} in {manifest_path}")
    return training.PairDataset(
        entries, cfg.mel, cfg.training.excerpt_frames, cfg.sample_rate
    )


def _check_rates(cfg: RunConfig):
    if cfg.training.sample_rate != cfg.sample_rate:
        raise DataError(
            f"training.sample_rate {cfg.training.sample_rate} != sample_rate {cfg.sample_rate}"
        )


def cmd_synth_toy(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    with _cleanup_on_failure(out):
        spec = cfg.toy if args.seed is None else replace(cfg.toy, seed=args.seed)
        manifest = data_toolkit.synth_toy_dataset(spec, args.pieces, out)
        _write_run_manifest(out, "synth-toy", cfg, {"n_pieces": args.pieces, "toy_seed": spec.seed})
    logger.info("wrote %d pairs under %s", len(manifest.entries), out)
    return 0


def cmd_prepare(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    raw = data_toolkit.PairManifest.load(args.manifest)
    with _cleanup_on_failure(out):
        manifest = data_toolkit.preprocess_corpus(
            raw,
            out,
            cfg.sample_rate,
            fragment_seconds=cfg.fragment_seconds,
            trim_threshold_db=cfg.trim.threshold_db,
            trim_min_gap_s=cfg.trim.min_gap_s,
            trim_window_s=cfg.trim.window_s,
        )
        _write_run_manifest(out, "prepare", cfg, {"n_pairs": len(manifest.entries)})
    logger.info("prepared %d excerpt pairs under %s", len(manifest.entries), out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    _check_rates(cfg)
    out = Path(args.out)
    dataset = _training_dataset(cfg, args.manifest, args.regime)
    schedule = diffusion.linear_beta_schedule(
        cfg.diffusion.train_steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end
    )
    model = networks.build_denoiser(cfg.model, cfg.mel, cfg.sample_rate, seed=cfg.training.seed)
    with _cleanup_on_failure(out):
        checkpoints = training.train_denoiser(
            cfg.training, dataset, model, schedule, out, resume_from=args.resume
        )
        _write_run_manifest(out, "train", cfg, {"regime": args.regime,
                                                "final_checkpoint": str(checkpoints[-1])})
    logger.info("training done; final checkpoint %s", checkpoints[-1])
    return 0


def cmd_train_scheduler(args) -> int:
    cfg = _load_cfg(args)
    _check_rates(cfg)
    out = Path(args.out)
    denoiser, meta, _ = networks.load_checkpoint(args.denoiser)
    dataset = _training_dataset(cfg, args.manifest, args.regime)
    betas = meta.get("train_schedule_betas")
    schedule = (
        diffusion.NoiseSchedule(betas=np.asarray(betas))
        if betas
        else diffusion.linear_beta_schedule(
            cfg.diffusion.train_steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end
        )
    )
    net = networks.build_schedule_network(cfg.scheduler_model, seed=cfg.scheduler_training.seed)
    with _cleanup_on_failure(out):
        training.train_schedule_network(
            cfg.scheduler_training, denoiser, dataset, net, schedule, out
        )
        _write_run_manifest(out, "train-scheduler", cfg, {"denoiser": str(args.denoiser)})
    return 0


def cmd_search_schedule(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    denoiser, _, _ = networks.load_checkpoint(args.denoiser)
    scheduler, _, _ = networks.load_checkpoint(args.scheduler)
    manifest = data_toolkit.PairManifest.load(args.manifest)
    val_entries = manifest.filter_split("val")
    if not val_entries:
        raise DataError(f"manifest {args.manifest} has no validation split")
    val_data = training.PairDataset(
        val_entries, cfg.mel, cfg.training.excerpt_frames, cfg.sample_rate
    )
    rng = np.random.default_rng(cfg.seed)
    excerpt = val_data.sample(rng)

    max_clips = args.max_val_clips
    cond_clips = [dsp.to_mono(dsp.load_wav(e.path_b)) for e in val_entries[:max_clips]]
    ref_clips = [dsp.to_mono(dsp.load_wav(e.path_a)) for e in val_entries[:max_clips]]
    embedder = evaluation.builtin_embedder(cfg.mel)
    ref_stats = evaluation.embed_stats(ref_clips, embedder)

    def scorer(generated):
        return evaluation.frechet_distance(evaluation.embed_stats(generated, embedder), ref_stats)

    with _cleanup_on_failure(out):
        candidates = schedule_search.run_grid_search(scheduler, cfg.search, excerpt, seed=cfg.seed)
        candidates.append(schedule_search.wg6_schedule())

        def generate_fn(sched, cond, seed):
            return inference.transfer_timbre(
                denoiser, cond, sched, seed=seed,
                chunk_frames=cfg.inference.chunk_frames,
                sigma_mode=cfg.diffusion.sigma_mode,
            )

        result = schedule_search.select_best_schedule(
            candidates, denoiser, cond_clips, scorer, generate_fn=generate_fn
        )
        sched_dir = out / "schedules"
        sched_dir.mkdir(parents=True, exist_ok=True)
        for i, scored in enumerate(result.scored):
            tagged = replace(scored.schedule, score=scored.score)
            tagged.save(sched_dir / f"candidate_{i:02d}.json", config_hash(cfg))
        result.best.save(sched_dir / "best.json", config_hash(cfg))
        summary = {
            "best": result.best.provenance,
            "best_score": result.best.score,
            "candidates": [
                {
                    "provenance": s.schedule.provenance,
                    "steps": len(s.schedule),
                    "score": s.score,
                    "error": s.error,
                    "stop_reason": s.schedule.stop_reason,
                }
                for s in result.scored
            ],
        }
        (out / "search_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        _write_run_manifest(out, "search-schedule", cfg, {"best": result.best.provenance})
    logger.info("selected %s (score %.6f)", result.best.provenance, result.best.score)
    return 0


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    model, _, _ = networks.load_checkpoint(args.denoiser)
    schedule = _resolve_schedule(args.schedule)
    clip = dsp.to_mono(dsp.load_wav(args.input))
    out_path = Path(args.output)
    sidecar = out_path.with_suffix(".json")
    with _cleanup_on_failure(out_path, sidecar):
        result = inference.transfer_timbre(
            model, clip, schedule, seed=cfg.seed,
            chunk_frames=cfg.inference.chunk_frames,
            sigma_mode=cfg.diffusion.sigma_mode,
        )
        out_path.parent.mkdir(parents=True, exist_ok=True)
        dsp.write_wav(out_path, dsp.peak_normalize(result, peak_db=-1.0))
        sidecar.write_text(
            json.dumps(
                {
                    "schema_version": 1,
                    "schedule_provenance": schedule.provenance,
                    "steps": len(schedule),
                    "seed": cfg.seed,
                    "config_hash": config_hash(cfg),
                    "input": str(args.input),
                },
                indent=2,
                sort_keys=True,
            )
        )
    logger.info("wrote %s (%d-step %s)", out_path, len(schedule), schedule.provenance)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out_path = Path(args.out)
    with _cleanup_on_failure(out_path):
        report = evaluation.evaluate_directory(
            args.generated, args.reference, evaluation.builtin_embedder(cfg.mel)
        )
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(report.to_json())
    logger.info("score %.6f over %d/%d clips", report.fad_like_score, report.n_gen, report.n_ref)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    model, _, _ = networks.load_checkpoint(args.denoiser)
    schedule = _resolve_schedule(args.schedule)
    out_path = Path(args.out)
    with _cleanup_on_failure(out_path):
        report = inference.measure_rtf(
            model, schedule, duration_s=args.duration, repeats=args.repeats
        )
        report["denoiser_param_count"] = networks.param_count(model)
        if args.scheduler:
            sched_net, _, _ = networks.load_checkpoint(args.scheduler)
            report["scheduler_param_count"] = networks.param_count(sched_net)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    logger.info("RTF %.2f at %d steps", report["rtf"], report["steps"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="retimbre", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", default=None, help="JSON run config (defaults if omitted)")
        p.set_defaults(fn=fn)
        return p

    p = add("synth-toy", cmd_synth_toy, help="render the synthetic paired-instrument corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pieces", type=int, default=6)
    p.add_argument("--seed", type=int, default=None, help="override the toy seed")

    p = add("prepare", cmd_prepare, help="preprocess a raw corpus into training excerpts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, help="train the denoiser")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--regime", choices=("global", "mix"), default="global")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = add("train-scheduler", cmd_train_scheduler, help="train the schedule network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--denoiser", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--regime", choices=("global", "mix"), default="global")

    p = add("search-schedule", cmd_search_schedule, help="generate and select short schedules")
    p.add_argument("--manifest", required=True)
    p.add_argument("--denoiser", required=True)
    p.add_argument("--scheduler", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-val-clips", type=int, default=12)

    p = add("infer", cmd_infer, help="run timbre transfer on a WAV")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--schedule", default="wg6", help='"wg6" or a schedule JSON path')

    p = add("evaluate", cmd_evaluate, help="Frechet score between two directories of WAVs")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)

    p = add("bench", cmd_bench, help="measure real-time factor")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--schedule", default="wg6")
    p.add_argument("--scheduler", default=None, help="also report this checkpoint's size")
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except DataError as exc:
        logger.error("data error: %s", exc)
        return 2
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())

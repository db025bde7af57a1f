#!/usr/bin/env python3
"""Real-time-factor sweep over schedule lengths for a trained checkpoint.

    python scripts/rtf_sweep.py --denoiser path/to/ckpt.pt [--duration 2.0]

Prints a small table (steps, median seconds, RTF) and the parameter count.
Absolute numbers are hardware-specific; the step-count proportionality is the
interesting part.
"""

import argparse

import numpy as np

from retimbre import inference, networks
from retimbre.schedule_search import InferenceSchedule, wg6_schedule


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--denoiser", required=True)
    parser.add_argument("--duration", type=float, default=2.0)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    model, _, _ = networks.load_checkpoint(args.denoiser)
    print(f"denoiser parameters: {networks.param_count(model) / 1e6:.2f}M")

    schedules = [
        wg6_schedule(),
        InferenceSchedule(betas=tuple(np.linspace(5e-4, 0.4, 12)), provenance="manual"),
        InferenceSchedule(betas=tuple(np.linspace(5e-4, 0.4, 20)), provenance="manual"),
    ]
    print(f"{'steps':>6} {'median_s':>10} {'rtf':>8}")
    for sched in schedules:
        report = inference.measure_rtf(
            model, sched, duration_s=args.duration, repeats=args.repeats
        )
        print(f"{report['steps']:>6} {report['median_s']:>10.3f} {report['rtf']:>8.2f}")


if __name__ == "__main__":
    main()

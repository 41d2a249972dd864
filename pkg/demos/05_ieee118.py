"""
Framing on the 118-bus system
=============================

The bus-21 cut: the adversary holds the 20-21, 21-20 and 21-22 flows and
frames the injections at 20, 21, 22 and the 22->21 flow. One SNR point.
"""

import argparse

import numpy as np

from gridframe.simharness import ExperimentConfig, run_scenario

parser = argparse.ArgumentParser()
parser.add_argument("--runs", type=int, default=40)
parser.add_argument("--snr", type=float, default=46.0)
args = parser.parse_args()

cfg = ExperimentConfig.from_file("demos/configs/bus21_ieee118.ini")
cfg = ExperimentConfig(**{**cfg.__dict__, "runs": args.runs, "snr_list": [args.snr]})
curve = run_scenario(cfg)
for p in curve.points:
    tag = p.attack if p.attack != "framing" else f"framing {p.magnitude_pct:g}%"
    print(f"{tag:>14}: mean error {p.mean_err_deg:.3f} deg, mean iterations {p.mean_N:.2f}, "
          f"failed {p.runs_failed}")
bus = np.argmax(np.abs(curve.points[-1].mean_perturbation_deg))
print(f"most perturbed bus index {bus} ({curve.points[-1].mean_perturbation_deg[bus]:+.3f} deg)")

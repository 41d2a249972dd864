"""
Which bus moves: perturbation profiles for three framed sets
============================================================

The same six adversary meters (around buses 3 and 12) frame three different
meter sets. The framed set decides which bus's angle the attack moves.
"""

import argparse

from gridframe.simharness import ExperimentConfig, perturbation_profile

parser = argparse.ArgumentParser()
parser.add_argument("--runs", type=int, default=200)
args = parser.parse_args()

for name in ("framed_set_i", "framed_set_ii", "framed_set_iii"):
    cfg = ExperimentConfig.from_file(f"demos/configs/{name}.ini")
    cfg = ExperimentConfig(**{**cfg.__dict__, "runs": args.runs})
    prof = perturbation_profile(cfg)
    print(f"{name}: framed {','.join(cfg.framed)}")
    for bus, deg in prof[:3]:
        print(f"    bus {bus:>3}: {deg:+.3f} deg")

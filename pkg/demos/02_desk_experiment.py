"""Baseline against PIF on synthetic "normalised brains".

Every synthetic volume is the same smooth template plus noise. Class-1
volumes carry a faint blob at a fixed site (jittered by about a voxel), the
kind of focal, location-bound effect a PIF layer is meant to pick up.

``python3 demos/02_desk_experiment.py [repeats]`` trains both desk models
(default 2 repeats, under a minute per repeat).
"""

import sys

from pifnet.data import SynthSpec, generate_dataset, split_subjects
from pifnet.presets import DESK_PAIRS, get_preset
from pifnet.training import DataSplits, TrainConfig, parameter_balance, run_experiment

repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 2

spec = SynthSpec(n_per_class=150)
records = split_subjects(generate_dataset(spec, seed=1), {"test": 1 / 6, "val": 1 / 6, "train": 2 / 3}, seed=1)
data = DataSplits(records)
print("split sizes:", data.sizes)

baseline, pif = (get_preset(name) for name in DESK_PAIRS["a-desk"])
print(f"parameter delta: {100 * parameter_balance(baseline, pif):+.1f}%")


def progress(result):
    print(f"  {result.model:<16} seed {result.seed}: stop at epoch {result.stop_epoch:2d}, "
          f"test bal. acc. {100 * result.test_bacc:.1f}%", flush=True)


report = run_experiment(baseline, pif, data, TrainConfig(repeats=repeats), on_repeat=progress)
print()
print(report.table())

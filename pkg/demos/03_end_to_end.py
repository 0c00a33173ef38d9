"""
Simulate, train, monitor, evaluate
==================================

A reduced run of the whole pipeline: 64x64 images instead of 150x150 so it
finishes in well under a minute.  ``gripsense demo`` runs the same steps at
full size.
"""

import json
import tempfile

from gripsense.features import StftConfig
from gripsense.pipeline import DemoConfig, PipelineConfig, run_demo

cfg = PipelineConfig(stft=StftConfig(out_size=64),
                     demo=DemoConfig(train_duration=30.0, test_duration=60.0, n_grabs=2,
                                     hold_min=5.0, hold_max=10.0, min_rest=8.0),
                     seed=5)
print("network parameters:", cfg.architecture.param_count)

with tempfile.TemporaryDirectory() as out:
    report = run_demo(cfg, out)

# %% per-pulse classification on the test session
print(json.dumps(report["classification"], indent=2))
print("EER:", report["eer"])

# %% handheld instances: truth vs detected
for name in ("truth_instances", "pred_instances"):
    print(name)
    for inst in report[name]:
        print(f"  {inst['start']:6.1f} -> {inst['end']:6.1f} s")
timing = report["timing"]
print("detection rate:", timing["detection_rate"], " spurious:", timing["spurious_pred"])
print("start errors (s):", timing["start_errors"], " end errors (s):", timing["end_errors"])

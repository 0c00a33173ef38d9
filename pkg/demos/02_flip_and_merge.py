"""
Cleaning up the label stream
============================

Per-pulse decisions arrive ten times a second and are sometimes wrong.
Short runs are flipped, medium runs are settled by their valid neighbours,
and only runs of at least 0.8 s survive.
"""

import numpy as np

from gripsense.monitor import (HANDHELD, HANDSFREE, MonitorConfig, StreamingMonitor, chunk_sequence,
                               extract_instances, flip_and_merge)

cfg = MonitorConfig()
rng = np.random.default_rng(3)

# %% a true timeline: 4 s free, 3 s in hand, 5 s free
truth = [HANDSFREE] * 40 + [HANDHELD] * 30 + [HANDSFREE] * 50

# corrupt 8% of the decisions
noisy = [(HANDHELD if lab == HANDSFREE else HANDSFREE) if rng.random() < 0.08 else lab for lab in truth]


def show(labels):
    return "".join("H" if lab == HANDHELD else "." for lab in labels)


print("truth  ", show(truth))
print("noisy  ", show(noisy))

# %% offline correction
chunks = flip_and_merge(chunk_sequence(noisy), cfg)
fixed = [c.label for c in chunks for _ in range(c.length)]
print("fixed  ", show(fixed))
for inst in extract_instances(chunks, cfg):
    print(f"  {inst.kind:9s} {inst.start:5.1f} -> {inst.end:5.1f} s{'  (ongoing)' if inst.ongoing else ''}")

# %% the same stream pushed one sample at a time
mon = StreamingMonitor(cfg)
for i, lab in enumerate(noisy):
    for ev in mon.push(lab):
        print(f"sample {i:3d}: {ev.kind} at t={ev.t} s (reported {(i - ev.index) / 10:.1f} s later)")
assert mon.flush() == chunks
print("streaming result equals the offline result")

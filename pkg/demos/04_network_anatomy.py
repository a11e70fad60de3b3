"""Inspect the network: resolution chain, parameter counts, file round trip.

The channel list and the squeeze-layer width scale the same architecture
from ~218k to ~3.5M parameters; each doubling multiplies the count by ~4.
"""

import numpy as np

from markgrid import ChannelConfig, GridUNet, predict_label

model = GridUNet(ChannelConfig((16, 16, 32, 64), 8), seed=0)
print("stage  ->  spatial size")
for name, hw in model.shape_trace():
    print(f"  {name:10s} {hw[0]:3d} x {hw[1]}")

print("\nconfig                         parameters")
prev = None
for channels, last in [((16, 16, 32, 64), 8), ((32, 32, 64, 128), 16),
                       ((64, 64, 128, 256), 32)]:
    count = GridUNet(ChannelConfig(channels, last)).param_count()
    ratio = f"  (x{count / prev:.3f})" if prev else ""
    print(f"  {str(channels):22s} {last:3d}  {count:>9,}{ratio}")
    prev = count

# Fresh models answer 0.5 everywhere under zero weights; a trained file
# round-trips bit for bit.
x = np.random.default_rng(1).random((1, 1, 128, 128), dtype=np.float32)
probs = model.forward(x)[0]
print("\nuntrained output range:", round(float(probs.min()), 3),
      "..", round(float(probs.max()), 3))
print("thresholded record:", predict_label(probs).cells.sum(), "cells marked")

model.save("demo_out_model.mgrd")
clone = GridUNet.load("demo_out_model.mgrd")
assert all(
    np.array_equal(p, clone.parameters()[name])
    for name, p in model.parameters().items()
)
print("save/load round trip: parameters identical")

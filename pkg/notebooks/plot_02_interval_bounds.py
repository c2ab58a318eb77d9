"""
Interval bounds of a small network
==================================

Interval parameters turn every weight into a range.  Propagating an input
through the interval layers yields lower and upper outputs that contain
the output of any network whose weights lie inside the ranges.
"""

import numpy as np

from innstab import interval, nn

rng = np.random.default_rng(1)
spec = nn.NetworkSpec([nn.Dense(4, 16), nn.ReLU(), nn.Dense(16, 16), nn.ReLU(), nn.Dense(16, 1)])
params = nn.init_params(spec, rng)

###############################################################################
# Start from zero-width intervals around the trained weights, then widen the
# interval layers by hand.

ip = interval.interval_params(spec, params, k=2)
print("interval layers:", ip.interval_layers)
for key in ip.trainable_keys():
    ip.lower[key] = ip.lower[key] - 0.05
    ip.upper[key] = ip.upper[key] + 0.05

x = rng.random((256, 4))
pred = interval.inn_forward(spec, ip, x)
print("mean width:", interval.inn_uncertainty(pred).mean())

###############################################################################
# Sample networks from the box and check that their outputs stay inside.

worst = 0.0
for _ in range(200):
    p = nn.copy_params(params)
    for key in ip.trainable_keys():
        p[key] = rng.uniform(ip.lower[key], ip.upper[key])
    y = nn.forward(spec, p, x)
    worst = max(worst, float(np.max(pred.lower - y)), float(np.max(y - pred.upper)))
print("largest violation (should be <= 0):", worst)

"""Per-dimension layer weights for the forward and backward passes.

Early dimensions get a large teleport ratio and spread their weight over many
hops; late dimensions keep most of it at hop 0. The backward schedule is the
mirror image. Run: python3 demos/01_layer_schedules.py
"""

import numpy as np

from stair.stepwise import build_schedule, uniform_schedule

np.set_printoptions(precision=4, suppress=True)

# the small configuration used to illustrate the weights: gamma=1, d=5, L=3
fwd = build_schedule(5, 3, gamma=1.0)
bwd = build_schedule(5, 3, gamma=1.0, direction="backward")

print("forward teleport ratios:", fwd.beta)
print("forward weights (rows = dimensions, cols = hops 0..3):")
print(fwd.alpha)
print("backward teleport ratios:", bwd.beta)
print(bwd.alpha)

# every row is a distribution over hops
print("row sums:", fwd.alpha.sum(axis=1))

# gamma controls how fast the ratio falls across dimensions
for gamma in (0.1, 1.0, 5.0):
    s = build_schedule(64, 3, gamma)
    print(f"gamma={gamma:<4} hop-0 weight of dims 1, 32, 64:", s.alpha[[0, 31, 63], 0])

# LightGCN is the uniform special case
print("uniform:", uniform_schedule(3, 3).alpha[0])

fwd.to_csv("schedule_forward.csv")
print("wrote schedule_forward.csv")

"""
The smooth sparse unit
======================

A smooth map from a real pre-activation to [0, 1] that is exactly 0 below 0
and exactly 1 above 1, with a coefficient alpha that controls how much mass
sits near zero.
"""

import numpy as np

from bgslf.graph import f_bump, sparsity_report, ssu_derivative, ssu_forward, ssu_grad, thresholds

# the building block: exp(-1/x) for positive x, zero otherwise
print("f(-2), f(0.5), f(1):", f_bump(-2.0), f_bump(0.5), f_bump(1.0))

# outside (0, 1) the unit is pinned; at 0.5 the bump terms cancel to alpha / (alpha + 1)
for alpha in (0.1, 1.0, 3.0):
    print(f"alpha={alpha:<4} phi(-0.3)={ssu_forward(-0.3, alpha)}  phi(0.5)={ssu_forward(0.5, alpha):.4f}"
          f"  phi(1.2)={ssu_forward(1.2, alpha)}")

# eps-tails: phi < eps on (0, sup) and phi > 1 - eps on (inf, 1)
for alpha in (0.25, 1.0, 4.0):
    sup, inf = thresholds(alpha, 0.05)
    print(f"alpha={alpha:<4} sup={sup:.6f} inf={inf:.6f}  phi(sup)={ssu_forward(sup, alpha):.9f}")

# inside the tails the training gradient is replaced by 1 so entries can leave the flat region
sup, inf = thresholds(1.0, 0.05)
x = np.array([-0.5, sup / 2, 0.5, (inf + 1) / 2, 1.5])
print("x           ", np.round(x, 4))
print("exact phi'  ", np.round(ssu_derivative(x), 6))
print("train grad  ", np.round(ssu_grad(x, 1.0, sup, inf), 6))

# small alpha pushes more of a uniform input towards zero
g = np.random.default_rng(0).uniform(0, 1, 10_000)
for alpha in (0.1, 1.0, 10.0):
    print(f"alpha={alpha:<4} fraction below 0.1: {sparsity_report(ssu_forward(g, alpha), 0.1):.3f}")

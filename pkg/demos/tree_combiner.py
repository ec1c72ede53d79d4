"""Classifier tree on toy maps: a residential gate picks one of two thresholds.

Run:  python3 demos/tree_combiner.py
The L-Seg stand-in is noisy and over-confident on decoys in rural parts, so a
single threshold has to trade the two regions off.  With the gate, the rural
leaf can use a stricter threshold.
"""
import numpy as np

from aeroseg.combiner import TreeInputs, optimize_triplet, tree_mean_f
from aeroseg.eval import best_row, sweep_many, threshold_grid

rng = np.random.default_rng(4)
data = []
for _ in range(3):
    n = 32
    gt = np.zeros((n, n), bool)
    gt[:, : n // 2] = rng.random((n, n // 2)) < 0.4        # residential half
    decoy = np.zeros((n, n), bool)
    decoy[:, n // 2:] = rng.random((n, n // 2)) < 0.2     # look-alikes in the rural half
    lseg = np.clip(0.25 + 0.45 * gt + 0.4 * decoy + rng.normal(0, 0.12, gt.shape), 0, 1)
    ra = np.zeros((n, n))
    ra[:, : n // 2] = 0.8
    ra += rng.normal(0, 0.05, ra.shape)
    data.append(TreeInputs(ra, lseg, gt))

grid = threshold_grid(0.05)
single = best_row(sweep_many([(d.lseg, d.gt) for d in data], grid, rho=0))
print(f"single threshold: F {single.f_measure:.3f} at {single.threshold:.2f}")
t, trace = optimize_triplet(data, grid, (0.5, single.threshold), rho=0)
for row in trace:
    print(f"step {row.step:2d} {row.coordinate:4s} L1={row.triplet.L1:.2f} L2={row.triplet.L2:.2f} "
          f"L3={row.triplet.L3:.2f}  F={row.mean_f:.3f}")
print(f"tree: F {tree_mean_f(data, t, rho=0):.3f}")

"""What a single inserted detection does to a cell's expected AP.

A (class, IoU-threshold) cell with accumulated counts T true positives,
F false positives, and a class ground-truth total has closed-form
expressions (under uniform score priors) for the expected AP change when
one more TP or FP is inserted at confidence s. This script walks through
their shape: TP insertions always help and help more at higher
confidence, FP insertions always hurt and hurt more at higher
confidence, and rare classes move more than frequent ones.
"""

import numpy as np

from detgain import ClassThresholdStats, delta_ap_fp_uniform, delta_ap_tp_uniform

cell = ClassThresholdStats(category_id=0, threshold=0.5,
                           tp_count=800, fp_count=9200, gt_count=1000)
print(f"Cell: T={cell.tp_count}, F={cell.fp_count}, A={cell.total}, "
      f"ground-truth total {cell.gt_count}\n")

print(f"{'s':>6}  {'TP insertion':>14}  {'FP insertion':>14}")
for s in np.linspace(0.05, 0.95, 10):
    tp = delta_ap_tp_uniform(float(s), cell)
    fp = delta_ap_fp_uniform(float(s), cell)
    print(f"{s:6.2f}  {tp:14.6e}  {fp:14.6e}")

print("\nTP marginals are positive and increasing in s;")
print("FP marginals are non-positive and decreasing in s.\n")

rare = ClassThresholdStats(0, 0.5, 80, 920, 100)
frequent = ClassThresholdStats(0, 0.5, 800, 9200, 1000)
s = 0.8
print("Rarity scaling: same T:F ratio, ground-truth totals 100 vs 1000")
print(f"  rare     TP@{s} = {delta_ap_tp_uniform(s, rare):.6e}")
print(f"  frequent TP@{s} = {delta_ap_tp_uniform(s, frequent):.6e}")
print("  -> a tenth of the ground truths, ten times the per-class AP movement.")

empty = ClassThresholdStats(0, 0.5, 0, 0, 1)
print(f"\nFirst TP into an empty pool with one ground truth: "
      f"{delta_ap_tp_uniform(0.5, empty):.1f} (the cell jumps straight to AP 1).")

"""Annotation corruption and how selection reacts to it.

Forty percent of a 400-image pool gets its annotations corrupted (box
jitter, label swaps, deletions, fake boxes). A strong model that
localizes the true objects disagrees sharply with the corrupted labels,
so its marginal on those images collapses while the weak model, which
mirrors the labels, looks comparatively fine. The teacher-student gap
therefore ranks corrupted images last and the selection loop avoids
them almost entirely.
"""

from common import make_dataset, strong_model_dump, weak_model_dump

from detgain import CorruptionConfig, CurationConfig, corrupt_dataset, run_simulation

clean = make_dataset(400, seed=10, min_gts=2, max_gts=5)
result = corrupt_dataset(clean, CorruptionConfig(probability=0.4, seed=11))
corrupted_ds = result.dataset
print(f"Corrupted {len(result.modified_ids)} of {len(clean.images)} images "
      f"({len(result.modified_ids) / len(clean.images):.0%})")

teacher_dets = strong_model_dump(clean, seed=12)          # sees the true objects
student_dets = weak_model_dump(corrupted_ds, seed=13)     # mirrors the noisy labels

cfg = CurationConfig(ratio=0.2, superbatch_size=40, seed=0)
trace = run_simulation(corrupted_ds, teacher_dets, student_dets, cfg,
                       iterations=50, corruption_manifest=result.modified_ids)
summary = trace.summary()

print(f"\nFive epochs of selection at ratio {cfg.ratio}:")
print(f"  corrupted fraction in the pool      : {summary['corrupted_base_fraction']:.3f}")
print(f"  corrupted fraction among selections : {summary['corrupted_selected_fraction']:.3f}")
print(f"  mean gap, selected images           : {summary['mean_learnability_selected']:.3e}")
print(f"  mean gap, rejected images           : {summary['mean_learnability_rejected']:.3e}")
print("\nSelection steers away from corrupted annotations without ever")
print("being told which images were corrupted.")

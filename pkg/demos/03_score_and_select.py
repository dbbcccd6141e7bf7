"""End-to-end scoring and sub-batch selection on a synthetic pool.

A strong model and a weak model both produce detection dumps for the
same 120-image dataset. Every image gets a marginal-mAP estimate under
each dump against the frozen pool statistics; the difference ranks how
much headroom the weak model still has on that image. A selection loop
then keeps the top 20% of each 30-image super-batch.
"""

from common import make_dataset, strong_model_dump, weak_model_dump

from detgain import (
    CurationConfig,
    IouThresholdGrid,
    match_dataset,
    pool_stats,
    run_simulation,
    score_superbatch,
    select_topk,
)

grid = IouThresholdGrid.coco()
ds = make_dataset(120, seed=1)
teacher_dets = strong_model_dump(ds, seed=2)
student_dets = weak_model_dump(ds, seed=3)

teacher = match_dataset(teacher_dets, ds, grid)
student = match_dataset(student_dets, ds, grid)
stats = pool_stats(student, grid)

ids = ds.image_ids()[:30]
records = score_superbatch(ids, teacher, student, stats, grid)
print("First super-batch (30 images):")
print(f"{'image':>6}  {'strong model':>13}  {'weak model':>13}  {'gap':>13}")
for rec in records[:8]:
    print(f"{rec.image_id:6d}  {rec.delta_teacher:13.6e}  {rec.delta_student:13.6e}  "
          f"{rec.learnability:13.6e}")
print("   ...")

cfg = CurationConfig(ratio=0.2, superbatch_size=30, seed=0)
chosen = select_topk(records, cfg)
print(f"\nTop 20% of the super-batch ({len(chosen)} images): {chosen}")

trace = run_simulation(ds, teacher_dets, student_dets, cfg, iterations=12, grid=grid)
summary = trace.summary()
print("\nTwelve-iteration selection run:")
for key in ("iterations", "selected_per_iteration", "distinct_images_selected",
            "mean_learnability_selected", "mean_learnability_rejected"):
    print(f"  {key}: {summary[key]}")

"""A short tour of the evaluation metrics on hand-sized examples.

Every number printed here can be checked by hand:

* AUC is the fraction of (clicked, unclicked) pairs ordered correctly,
  ties counting one half.
* The ROC curve's trapezoidal area is the same number, computed another way.
* A prediction is positive when its probability is >= the threshold.
"""

from clickgraph.metrics import (
    auc,
    confusion_at,
    logloss,
    relative_improvement,
    roc_points,
    threshold_sweep,
)

labels = [1, 0, 1, 0]
scores = [0.9, 0.8, 0.7, 0.6]

print("labels", labels, "scores", scores)
# pairs (pos, neg): (0.9, 0.8) (0.9, 0.6) (0.7, 0.8) (0.7, 0.6) -> 3 of 4 correct
print(f"AUC (rank statistic)        {auc(labels, scores):.4f}")
print(f"AUC (ROC trapezoid area)    {roc_points(labels, scores).area():.4f}")
print("ROC points:", roc_points(labels, scores).points)

print(f"\nlogloss y=[1,0] p=[0.9,0.2] {logloss([1, 0], [0.9, 0.2]):.6f}")

c = confusion_at([1, 0, 1, 0], [0.9, 0.8, 0.2, 0.1], 0.5)
print(f"\nconfusion at 0.5: tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn} "
      f"precision={c.precision} recall={c.recall} f1={c.f1}")

sweep = threshold_sweep([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
print(f"\nperfectly separated scores: best F1 {sweep.best_f1} first reached at threshold {sweep.best_threshold}")

# Relative improvement of an online-learning AUC over an offline baseline.
print(f"\nrelative improvement 0.7585 vs 0.7418: {relative_improvement(0.7585, 0.7418):.4f}%")
print(f"relative improvement 0.4666 vs 0.4688: {relative_improvement(0.4666, 0.4688):.4f}%")

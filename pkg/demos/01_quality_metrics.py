"""Score representations and test the scores as misclassification detectors.

Trains a plain contrastive encoder on the toy dataset, fits a linear probe,
then asks: without looking at labels, which per-sample statistic best
separates samples the probe gets right from the ones it gets wrong?

Run:  python demos/01_quality_metrics.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from repscore.evaluation import curves_svg, metric_benchmark, oriented_scores, roc_curve
from repscore.losses import LossConfig
from repscore.metrics import batch_quality_report, q_score
from repscore.network import encode
from repscore.repstore import RepresentationMatrix
from repscore.trainer import (
    TrainOptions,
    evaluate_probe,
    generate_dataset,
    stratified_split,
    train_encoder,
    train_linear_probe,
)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# A peaked, sparse vector scores far higher than a flat one of similar mass.
peaked = np.array([0.0, 0.0, 0.0, 3.0])
flat = np.array([0.7, 0.8, 0.75, 0.75])
print(f"Q(peaked) = {q_score(peaked):.4f}   Q(flat) = {q_score(flat):.4f}")

# %% train a baseline encoder (contrastive loss only)
ds = generate_dataset(seed=7)
train_idx, test_idx = stratified_split(ds.class_labels, 0.2, seed=7)
params, history = train_encoder(ds.subset(train_idx), LossConfig(), TrainOptions(seed=7))
c = history.column("contrastive")
print(f"contrastive loss {c[:20].mean():.3f} -> {c[-20:].mean():.3f} over {len(c)} steps")

# %% linear probe on frozen representations
H, _ = encode(params, ds.samples)
y = ds.class_labels
probe = train_linear_probe(H[train_idx], y[train_idx], k_classes=ds.k_classes)
accuracy, correct = evaluate_probe(probe, H[test_idx], y[test_idx])
print(f"probe accuracy {accuracy:.3f} (chance {1 / ds.k_classes:.3f})")

# %% benchmark every metric as a correctness predictor
report = batch_quality_report(RepresentationMatrix(H[test_idx]))
rows = metric_benchmark(report, correct)
print(f"\n{'metric':<14}{'AUROC':>8}{'AUPRC':>8}   (prevalence {rows[0].prevalence:.3f})")
for r in rows:
    print(f"{r.metric:<14}{r.auroc:>8.3f}{r.auprc:>8.3f}")

keep = report.valid
curves = {r.metric: roc_curve(oriented_scores(report, r.metric)[keep], correct[keep]) for r in rows}
curves_svg(curves, out / "roc_all_metrics.svg", title="ROC of quality metrics")
print(f"\nwrote {out / 'roc_all_metrics.svg'}")

"""Input-gradient heatmaps for a class's dominant feature and a weak one.

The toy inputs are 8x8 grids, so each map is written as a PGM image next to
a CSV of the normalised values.  Each line reports how strongly the map
correlates with the class template, for comparing the dominant feature
against a weakly active one.

Run:  python demos/03_saliency.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from repscore.evaluation import class_profiles
from repscore.losses import LossConfig
from repscore.network import encode
from repscore.repstore import LabelSet, RepresentationMatrix
from repscore.saliency import dominant_feature_index, saliency_map
from repscore.trainer import TrainOptions, generate_dataset, train_encoder, train_linear_probe

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "saliency"
out.mkdir(parents=True, exist_ok=True)

ds = generate_dataset(seed=7)
params, _ = train_encoder(ds, LossConfig(lambda1=0.1, lambda2=0.1), TrainOptions(seed=7))
H, _ = encode(params, ds.samples)
pred = train_linear_probe(H, ds.class_labels).predict(H)
profiles = class_profiles(RepresentationMatrix(H), LabelSet(ds.class_labels, predicted_labels=pred))

for p in profiles[:3]:
    k = dominant_feature_index(p)
    sample = int(np.flatnonzero(ds.class_labels == p.class_id)[0])
    active = np.flatnonzero(H[sample] > 0)
    weak = int(active[np.argmin(H[sample, active])]) if active.size else k
    for feature in (k, weak):
        paths = saliency_map(params, ds.samples[sample], feature, sample_id=sample).save(out)
        overlap = np.corrcoef(np.abs(ds.templates[p.class_id]), np.loadtxt(paths[0], delimiter=","))[0, 1]
        print(f"class {p.class_id} (acc {p.accuracy:.2f}) sample {sample} feature {feature:>2}: "
              f"correlation with class template {overlap:+.2f} -> {paths[1].name}")

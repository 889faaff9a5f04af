"""
PPG to blood pressure, against a mean regressor
===============================================

Train linear, MLP and CNN regressors on a subject-disjoint split and
compare them with the constant that predicts the training mean.
"""
import numpy as np

from ppgbp.evaluation import SplitSpec, evaluate_checkpoint, paired_t_test, subject_split
from ppgbp.models import ModelSpec, TrainConfig, train
from ppgbp.segmentation import SegmentPolicy, build_window_set
from ppgbp.synth import CohortSpec, synth_cohort

cohort = synth_cohort(CohortSpec(n_subjects=30, duration_s=120, noise_std=0.05, seed=1))
ws = build_window_set([(r.subject_id, r.ppg, r.abp) for r in cohort], SegmentPolicy("const_beats", 7))
train_set, val_set, test_set = subject_split(ws, SplitSpec(0.7, 0.15, 0.15, seed=0))
print(f"{len(train_set)}/{len(val_set)}/{len(test_set)} windows, "
      f"{len(train_set.subjects)}/{len(val_set.subjects)}/{len(test_set.subjects)} subjects")

cfg = TrainConfig(epochs=25, seed=0)
errors = {}
for kind in ("linear", "mlp", "cnn1d"):
    ckpt, hist = train(ModelSpec(kind), train_set, val_set, cfg)
    rep = evaluate_checkpoint(ckpt, train_set, test_set, kind)
    errors[kind] = np.abs(ckpt.predict(test_set.inputs()) - test_set.labels())[:, 0]
    print(f"{kind:7s} SBP {rep.sbp.mae:5.2f} +- {rep.sbp.std:4.2f}   DBP {rep.dbp.mae:5.2f} +- {rep.dbp.std:4.2f}"
          f"   (best epoch {ckpt.metadata['best_epoch']})")
base = rep.baseline
print(f"mean    SBP {base.sbp.mae:5.2f} +- {base.sbp.std:4.2f}   DBP {base.dbp.mae:5.2f} +- {base.dbp.std:4.2f}")

# paired test on per-window SBP errors
t = paired_t_test(errors["cnn1d"], errors["linear"])
print(f"CNN vs linear SBP errors: t={t.t:.2f}, p={t.p:.3g}")

print("\nCNN SBP error per 10 mmHg bin:")
for b in rep.sbp.bins:
    if b.count:
        print(f"  [{b.lo:5.0f},{b.hi:5.0f})  n={b.count:4d}  MAE {b.mae:5.2f}")

"""
Why splits must be by subject
=============================

When windows of one person land in both train and test, a model can
recognise the person instead of reading the pulse, and the test error
looks better than it should.
"""
from ppgbp.errors import ContaminationError
from ppgbp.evaluation import SplitSpec, mae, sample_split, subject_split
from ppgbp.models import ModelSpec, TrainConfig, check_disjoint, train
from ppgbp.segmentation import SegmentPolicy, build_window_set
from ppgbp.synth import CohortSpec, synth_cohort

# morphology_jitter gives each subject a BP-unrelated shape signature
cohort = synth_cohort(CohortSpec(n_subjects=30, duration_s=120, noise_std=0.05,
                                 morphology_jitter=1.0, seed=4))
ws = build_window_set([(r.subject_id, r.ppg, r.abp) for r in cohort], SegmentPolicy("const_beats", 7))
split = SplitSpec(0.7, 0.15, 0.15, seed=0)
cfg = TrainConfig(epochs=40, seed=0)

tr, va, te = subject_split(ws, split)
ckpt, _ = train(ModelSpec("cnn1d"), tr, va, cfg)
honest = mae(ckpt.predict(te.inputs()), te.labels())

ltr, lva, lte = sample_split(ws, split)
try:
    check_disjoint(train=ltr, test=lte)
except ContaminationError as exc:
    print("guard:", exc)
ckpt, _ = train(ModelSpec("cnn1d"), ltr, lva, cfg, check=False)
leaky = mae(ckpt.predict(lte.inputs()), lte.labels())

print(f"subject split  SBP {honest.sbp_mae:5.2f}  DBP {honest.dbp_mae:5.2f}")
print(f"window split   SBP {leaky.sbp_mae:5.2f}  DBP {leaky.dbp_mae:5.2f}  (optimistic)")

"""
Camera pulses, transfer and personalization
===========================================

A CNN trained on contact PPG is adapted to camera pulses by tuning
only its last layer, leaving one subject out at a time, with and without
a fifth of the held-out subject's earliest windows.
"""
from ppgbp.evaluation import loso_experiment
from ppgbp.models import ModelSpec, TrainConfig, train
from ppgbp.rppg import rppg_window_pipeline
from ppgbp.segmentation import SegmentPolicy, WindowSet, build_window_set
from ppgbp.synth import CohortSpec, synth_cohort

source = synth_cohort(CohortSpec(n_subjects=20, duration_s=120, noise_std=0.05, seed=10))
ws = build_window_set([(r.subject_id, r.ppg, r.abp) for r in source], SegmentPolicy("const_beats", 7))
ids = ws.subjects
base, _ = train(ModelSpec("cnn1d"), ws.select(ids[:16]), ws.select(ids[16:]), TrainConfig(epochs=20))

target = synth_cohort(CohortSpec(n_subjects=6, duration_s=240, noise_std=0.05, seed=20))
windows = []
for rec in target:
    windows += rppg_window_pipeline(rec.rgb).windows
rw = WindowSet(windows, SegmentPolicy("const_beats", 7))
print(f"{len(rw)} camera windows from {len(rw.subjects)} subjects")

cfg = TrainConfig(epochs=40)
header = "setting               model SBP     model DBP     mean SBP      mean DBP"
print(header)
for flag in (False, True):
    row = loso_experiment(rw, base, cfg, personalization=flag).table_row()
    print(f"{row['setting']:20s}" + "".join(
        f"  {row[f'{who}_{t}_mean']:5.2f}+-{row[f'{who}_{t}_std']:4.2f}"
        for who in ("model", "mean") for t in ("sbp", "dbp")))

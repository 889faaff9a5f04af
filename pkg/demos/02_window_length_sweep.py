"""
How long should a window be?
============================

Fraction of windows passing the SNR gate as the beat count grows, for
contact PPG and for camera (POS) pulses of the same subjects.
"""
from ppgbp.rppg import acceptance_curve, pos_extract
from ppgbp.segmentation import SWEEP_LENGTHS, SegmentPolicy, build_window_set
from ppgbp.synth import CohortSpec, synth_cohort

# heavy noise so that the gate has something to do
cohort = synth_cohort(CohortSpec(n_subjects=6, duration_s=180, noise_std=2.0, seed=3))
records = [(r.subject_id, r.ppg, r.abp) for r in cohort]

print("beats  ppg_accept  rppg_accept")
rppg = dict(acceptance_curve([pos_extract(r.rgb) for r in cohort], SWEEP_LENGTHS))
for n in SWEEP_LENGTHS:
    ws = build_window_set(records, SegmentPolicy("const_beats", n))
    frac = len(ws) / ws.n_generated if ws.n_generated else 0.0
    print(f"{n:5d}  {frac:10.2f}  {rppg[n]:11.2f}")

"""
From a raw record to gated windows
==================================

One synthetic subject: filter the PPG, estimate heart rate, cut
seven-beat windows, label them from the ABP trace and gate them.
"""
import numpy as np

from ppgbp.dsp import bandpass, estimate_heart_rate, snr_db
from ppgbp.segmentation import RECORD_HR_BAND, GatingRules, SegmentPolicy, build_window_set
from ppgbp.synth import CohortSpec, synth_subject

rec = synth_subject(CohortSpec(n_subjects=1, duration_s=120, noise_std=0.1, seed=7), 0)
print(f"{rec.subject_id}: {len(rec.ppg)} samples at {rec.ppg.fs:g} Hz")

# zero-phase 0.5-8 Hz band-pass, then the dominant rate in 40-180 bpm
ppg = bandpass(rec.ppg)
hr = estimate_heart_rate(ppg, RECORD_HR_BAND)
print(f"spectral HR {hr:.1f} bpm, programmed median {np.median(rec.truth.hr):.1f} bpm")
print(f"record SNR {snr_db(ppg, hr):.1f} dB")

# every window holds seven beats and is stretched to 875 samples (60 bpm at 125 Hz)
ws = build_window_set([(rec.subject_id, rec.ppg, rec.abp)], SegmentPolicy.parse("const_beats:7"))
print(f"{len(ws)} of {ws.n_generated} windows accepted, rejections {dict(ws.rejection_log)}")
for w in ws.windows[:3]:
    print(f"  t={w.source_offset:6.2f}s  SBP {w.sbp:6.1f}  DBP {w.dbp:5.1f}  HR {w.hr:5.1f}  SNR {w.snr:5.1f} dB")

# tighter rules reject more, and the log says why
strict = GatingRules(sbp_range=(75, rec.baseline[0]), snr_min=0.0)
ws2 = build_window_set([(rec.subject_id, rec.ppg, rec.abp)], SegmentPolicy.parse("const_beats:7"), strict)
print(f"strict rules: {len(ws2)} accepted, rejections {dict(ws2.rejection_log)}")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppgbp.synth import CohortSpec, subject_id, synth_cohort, synth_subject

QUICK = dict(n_subjects=4, duration_s=30)


def test_seed_determinism():
    a = synth_cohort(CohortSpec(seed=5, **QUICK))
    b = synth_cohort(CohortSpec(seed=5, **QUICK))
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.ppg.samples, rb.ppg.samples)
        assert np.array_equal(ra.abp.samples, rb.abp.samples)
        assert np.array_equal(ra.rgb.rgb, rb.rgb.rgb)


def test_subject_independent_of_cohort_size():
    small = synth_subject(CohortSpec(seed=2, n_subjects=3, duration_s=30), 1)
    large = synth_subject(CohortSpec(seed=2, n_subjects=30, duration_s=30), 1)
    assert np.array_equal(small.ppg.samples, large.ppg.samples)


def test_different_seeds_differ():
    a = synth_subject(CohortSpec(seed=0, **QUICK), 0)
    b = synth_subject(CohortSpec(seed=1, **QUICK), 0)
    assert not np.array_equal(a.ppg.samples, b.ppg.samples)


def test_ids_and_lengths():
    spec = CohortSpec(seed=0, fs=100.0, **QUICK)
    cohort = synth_cohort(spec)
    assert [r.subject_id for r in cohort] == [subject_id(i) for i in range(4)]
    for r in cohort:
        assert len(r.ppg) == len(r.abp) == 3000
        assert len(r.rgb) == 900


def test_abp_hits_programmed_extremes():
    rec = synth_subject(CohortSpec(seed=4, **QUICK), 2)
    tr = rec.truth
    x = rec.abp.samples
    assert np.allclose(x[tr.peak], tr.sbp, atol=1e-9)
    assert np.allclose(x[tr.onset], tr.dbp, atol=1e-9)


def test_physiological_order():
    for rec in synth_cohort(CohortSpec(seed=7, bp_between_subject_std=25, **QUICK)):
        assert np.all(rec.truth.sbp > rec.truth.dbp)


def test_hr_range_respected():
    rec = synth_subject(CohortSpec(seed=1, hr_range=(70, 75), **QUICK), 0)
    assert rec.truth.hr.min() >= 70 and rec.truth.hr.max() <= 75


def test_coupling_zero_decouples_morphology():
    cohort = synth_cohort(CohortSpec(seed=0, n_subjects=6, duration_s=30, morphology_coupling=0))
    delays = np.concatenate([r.truth.delay for r in cohort])
    ratios = np.concatenate([r.truth.ratio for r in cohort])
    assert np.ptp(delays) == 0 and np.ptp(ratios) == 0


def test_coupling_one_tracks_bp():
    cohort = synth_cohort(CohortSpec(seed=0, n_subjects=6, duration_s=60))
    sbp = np.concatenate([r.truth.sbp for r in cohort])
    delay = np.concatenate([r.truth.delay for r in cohort])
    assert abs(np.corrcoef(sbp, delay)[0, 1]) > 0.9


def test_skew_moves_distribution():
    base = dict(n_subjects=200, duration_s=5, seed=0)
    plain = [r.baseline[0] for r in synth_cohort(CohortSpec(**base))]
    skewed = [r.baseline[0] for r in synth_cohort(CohortSpec(bp_skew=8, **base))]
    s = lambda v: np.mean((np.array(v) - np.mean(v)) ** 3) / np.std(v) ** 3
    assert s(skewed) > s(plain) + 0.4


def test_noise_free_ppg_is_smooth_and_normalized():
    rec = synth_subject(CohortSpec(seed=0, **QUICK), 0)
    assert np.ptp(rec.ppg.samples) == pytest.approx(1.0)


def test_rgb_pulse_lives_in_green():
    rec = synth_subject(CohortSpec(seed=0, **QUICK), 0)
    assert np.ptp(rec.rgb.r) == 0 and np.ptp(rec.rgb.b) == 0 and np.ptp(rec.rgb.g) > 0


def test_labels_within_record():
    rec = synth_subject(CohortSpec(seed=0, n_subjects=1, duration_s=150), 0)
    times = [lab[0] for lab in rec.rgb.bp_labels]
    assert times == [0.0, 60.0, 120.0]


@pytest.mark.parametrize("bad", [dict(n_subjects=0), dict(noise_std=-1), dict(morphology_coupling=2),
                                 dict(hr_range=(90, 60)), dict(duration_s=0)])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        CohortSpec(**bad)


def test_dict_roundtrip():
    spec = CohortSpec(seed=9, bp_mean=(110, 70))
    assert CohortSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        CohortSpec.from_dict({"bogus": 1})


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 3))
def test_bp_within_clips(seed, skew):
    spec = CohortSpec(n_subjects=2, duration_s=10, seed=seed, bp_skew=skew, bp_between_subject_std=40)
    for r in synth_cohort(spec):
        assert 70 <= r.truth.sbp.min() and r.truth.sbp.max() <= 180
        assert 35 <= r.truth.dbp.min() and r.truth.dbp.max() <= 90


def test_fingerprint_only_with_jitter():
    base = dict(seed=3, **QUICK)
    plain = synth_subject(CohortSpec(**base), 1)
    again = synth_subject(CohortSpec(**base), 1)
    assert np.array_equal(plain.ppg.samples, again.ppg.samples)
    jittered = synth_subject(CohortSpec(morphology_jitter=1.0, **base), 1)
    assert np.array_equal(plain.truth.sbp, jittered.truth.sbp)
    assert not np.array_equal(plain.ppg.samples, jittered.ppg.samples)

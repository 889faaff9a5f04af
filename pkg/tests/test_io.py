import numpy as np
import pytest

from ppgbp.io import read_record, read_rgb, read_windowset, scan_inputs, write_record, write_rgb, write_windowset
from ppgbp.segmentation import SegmentPolicy, build_window_set
from ppgbp.synth import CohortSpec, synth_subject

from conftest import records_of


@pytest.fixture(scope="module")
def rec():
    return synth_subject(CohortSpec(seed=0, n_subjects=1, duration_s=20, noise_std=0.1), 0)


def test_record_roundtrip_exact(tmp_path, rec):
    write_record(tmp_path, rec.subject_id, rec.ppg, rec.abp)
    sid, ppg, abp = read_record(tmp_path / f"{rec.subject_id}.csv")
    assert sid == rec.subject_id and ppg.fs == rec.ppg.fs
    assert np.array_equal(ppg.samples, rec.ppg.samples)
    assert np.array_equal(abp.samples, rec.abp.samples)


def test_rgb_roundtrip_exact(tmp_path, rec):
    write_rgb(tmp_path, rec.rgb)
    back = read_rgb(tmp_path / f"{rec.subject_id}.csv")
    assert np.array_equal(back.rgb, rec.rgb.rgb)
    assert back.bp_labels == rec.rgb.bp_labels and back.fps == rec.rgb.fps


def test_scan_classifies(tmp_path, rec):
    (tmp_path / "p").mkdir()
    (tmp_path / "r").mkdir()
    write_record(tmp_path / "p", rec.subject_id, rec.ppg, rec.abp)
    write_rgb(tmp_path / "r", rec.rgb)
    assert scan_inputs(tmp_path / "p")[0] == "ppg"
    assert scan_inputs(tmp_path / "r")[0] == "rppg"
    with pytest.raises(FileNotFoundError):
        scan_inputs(tmp_path)


def test_scan_rejects_mixture(tmp_path, rec):
    write_record(tmp_path, "A", rec.ppg, rec.abp)
    rgb = rec.rgb
    rgb.subject_id = "B"
    write_rgb(tmp_path, rgb)
    with pytest.raises(ValueError):
        scan_inputs(tmp_path)


def test_windowset_roundtrip(tmp_path, small_cohort):
    ws = build_window_set(records_of(small_cohort[:2]), SegmentPolicy("const_time", 4),
                          with_derivatives=True)
    write_windowset(tmp_path / "w.csv", ws)
    back = read_windowset(tmp_path / "w.csv")
    assert np.array_equal(back.inputs(), ws.inputs())
    assert np.array_equal(back.labels(), ws.labels())
    assert [w.source_offset for w in back] == [w.source_offset for w in ws]
    assert back.policy == ws.policy and back.rules == ws.rules
    assert back.rejection_log == ws.rejection_log


def test_windowset_write_is_byte_stable(tmp_path, small_windows):
    write_windowset(tmp_path / "a.csv", small_windows)
    write_windowset(tmp_path / "b.csv", small_windows)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_window_ids_restart_per_subject(tmp_path, small_windows):
    write_windowset(tmp_path / "a.csv", small_windows)
    rows = [line.split(",")[:2] for line in (tmp_path / "a.csv").read_text().splitlines()[1:]]
    first = {}
    for sid, wid in rows:
        first.setdefault(sid, wid)
    assert set(first.values()) == {"0"}

import numpy as np
import pytest

from ppgbp.segmentation import SegmentPolicy, build_window_set
from ppgbp.synth import CohortSpec, synth_cohort


def records_of(cohort):
    return [(r.subject_id, r.ppg, r.abp) for r in cohort]


@pytest.fixture(scope="session")
def small_cohort():
    return synth_cohort(CohortSpec(n_subjects=6, duration_s=90, noise_std=0.05, seed=3))


@pytest.fixture(scope="session")
def small_windows(small_cohort):
    return build_window_set(records_of(small_cohort), SegmentPolicy("const_beats", 7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

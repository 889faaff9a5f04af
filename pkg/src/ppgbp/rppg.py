"""Remote PPG: POS pulse extraction from ROI-mean RGB traces and 7-beat windowing."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dsp import (
    DEFAULT_BAND,
    BandSpec,
    TimeSeries,
    bandpass,
    estimate_heart_rate,
    resample_to_length,
    zscore,
)
from .segmentation import (
    NOMINAL_FS,
    RECORD_HR_BAND,
    GatingRules,
    SegmentPolicy,
    WindowSet,
    apply_gates,
    beat_window_bounds,
    finish_window,
    window_snr,
)
from .errors import (
    DegenerateTraceError,
    InsufficientLengthError,
    InvalidBandError,
    NoDominantComponentError,
    UndefinedSNRError,
    ZeroVarianceError,
)

POS_WINDOW_S = 1.6
POS_PROJECTION = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])
RPPG_BEATS = 7
LABEL_TOLERANCE_S = 60.0


@dataclass(eq=False)
class RgbTrace:
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    fps: float
    subject_id: str = ""
    bp_labels: list = field(default_factory=list)  # [(t, sbp, dbp), ...]

    def __post_init__(self):
        self.r, self.g, self.b = (np.asarray(c, dtype=float) for c in (self.r, self.g, self.b))
        if not (self.r.shape == self.g.shape == self.b.shape) or self.r.ndim != 1:
            raise ValueError("r, g, b must be equal-length 1-D arrays")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if np.any(self.rgb <= 0):
            raise ValueError("RGB intensity means must be positive")
        self.bp_labels = [tuple(float(v) for v in lab) for lab in self.bp_labels]

    @property
    def rgb(self) -> np.ndarray:
        return np.vstack([self.r, self.g, self.b])

    def __len__(self):
        return len(self.r)


def pos_window_len(fps: float) -> int:
    return int(np.ceil(POS_WINDOW_S * fps))


def pos_extract(trace: RgbTrace) -> TimeSeries:
    """Plane-orthogonal-to-skin pulse extraction.

    Each 1.6 s window (hop of one frame) is divided by its per-channel
    temporal mean, projected onto the two axes orthogonal to the skin tone,
    combined with the ratio of their standard deviations, centred and
    overlap-added into the output.
    """
    C = trace.rgb
    n = C.shape[1]
    L = pos_window_len(trace.fps)
    if n < L:
        raise InsufficientLengthError(f"trace of {n} frames shorter than POS window {L}")
    win = sliding_window_view(C, L, axis=1)            # (3, n-L+1, L)
    mean = win.mean(axis=2, keepdims=True)
    if np.any(mean == 0):
        raise DegenerateTraceError("zero channel mean inside a POS window")
    cn = win / mean
    s = np.einsum("pc,cwl->pwl", POS_PROJECTION, cn)   # (2, n-L+1, L)
    sd = s.std(axis=2)
    # constant windows have zero spread on both axes; their contribution is zero
    alpha = np.divide(sd[0], sd[1], out=np.zeros_like(sd[0]), where=sd[1] > 1e-12 * (1 + sd[0]))
    h = s[0] + alpha[:, None] * s[1]
    h -= h.mean(axis=1, keepdims=True)
    out = np.zeros(n)
    for j in range(L):
        out[j:j + h.shape[0]] += h[:, j]
    return TimeSeries(out, trace.fps)


def nearest_label(labels, t: float, tolerance: float = LABEL_TOLERANCE_S):
    """``(sbp, dbp)`` of the label closest in time to ``t``, or ``None``."""
    if not labels:
        return None
    times = np.array([lab[0] for lab in labels])
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > tolerance:
        return None
    return labels[k][1], labels[k][2]


def rppg_window_pipeline(trace: RgbTrace, rules=None, beats: int = RPPG_BEATS,
                         band: BandSpec = DEFAULT_BAND):
    """POS -> band-pass -> ``beats``-beat windows resampled to ``beats * 125`` samples.

    Windows are z-scored, labelled with the bedside reading nearest their
    centre and gated. Returns a :class:`~ppgbp.segmentation.WindowSet`.
    """
    rules = rules or GatingRules()
    policy = SegmentPolicy("const_beats", beats)
    sid = trace.subject_id
    log: Counter = Counter()
    failures: Counter = Counter()
    try:
        pulse = bandpass(pos_extract(trace), band)
        hr = estimate_heart_rate(pulse, RECORD_HR_BAND)
    except InsufficientLengthError:
        failures["record_too_short"] += 1
        return WindowSet([], policy, log, rules, failures)
    except (NoDominantComponentError, InvalidBandError):
        failures["hr_estimation"] += 1
        return WindowSet([], policy, log, rules, failures)

    windows = []
    for a, b in beat_window_bounds(len(pulse), pulse.fs, hr, beats):
        offset = a / pulse.fs
        label = nearest_label(trace.bp_labels, 0.5 * (a + b) / pulse.fs)
        if label is None:
            log["no_label"] += 1
            continue
        seg = resample_to_length(TimeSeries(pulse.samples[a:b], pulse.fs), policy.target_len)
        try:
            w = finish_window(sid, TimeSeries(seg.samples, NOMINAL_FS), label[0], label[1], hr,
                              offset, "const_beats", False, 60.0)
        except ZeroVarianceError:
            log["zero_variance"] += 1
            continue
        except UndefinedSNRError:
            log["snr_min"] += 1
            continue
        reason = apply_gates(w, rules)
        if reason:
            log[reason] += 1
        else:
            windows.append(w)
    return WindowSet(windows, policy, log, rules, failures)


def acceptance_curve(pulses: Sequence[TimeSeries], lengths: Sequence[int],
                     snr_min: float = -7.0) -> list[tuple[int, float]]:
    """Fraction of windows with SNR >= ``snr_min`` for each beat count.

    ``pulses`` are extracted pulse signals (e.g. POS output); every length is
    cut from the same pulses with identical preprocessing.
    """
    prepared = []
    for p in pulses:
        try:
            f = bandpass(p)
            prepared.append((f, estimate_heart_rate(f, RECORD_HR_BAND)))
        except (InsufficientLengthError, NoDominantComponentError):
            continue
    curve = []
    for beats in lengths:
        total = ok = 0
        for f, hr in prepared:
            for a, b in beat_window_bounds(len(f), f.fs, hr, int(beats)):
                total += 1
                seg = resample_to_length(TimeSeries(f.samples[a:b], f.fs), int(beats) * int(NOMINAL_FS))
                try:
                    snr = window_snr(zscore(TimeSeries(seg.samples, NOMINAL_FS)), "const_beats", 60.0)
                except (ZeroVarianceError, UndefinedSNRError):
                    continue
                ok += snr >= snr_min
        curve.append((int(beats), ok / total if total else 0.0))
    return curve

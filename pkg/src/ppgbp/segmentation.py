"""Windowing, labelling and gating of continuous PPG/ABP record pairs.

Two cropping policies are supported:

``const_time``
    Consecutive non-overlapping windows of a fixed duration. Pulse cycles
    are cut wherever the window edges fall.
``const_beats``
    Windows spanning a fixed number of beats at the record's spectral heart
    rate, each resampled to ``beats * 125`` samples so that the window reads
    as a 60 bpm signal at the nominal 125 Hz rate.

Labels come from the ABP waveform of the *source* window, before any
resampling.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .dsp import (
    DEFAULT_BAND,
    BandSpec,
    TimeSeries,
    bandpass,
    derivative,
    estimate_heart_rate,
    resample_to_length,
    snr_db,
    zscore,
)
from .errors import (
    InsufficientLengthError,
    InvalidBandError,
    NoDominantComponentError,
    NoLabelError,
    UndefinedSNRError,
    ZeroVarianceError,
)

NOMINAL_FS = 125.0
SWEEP_LENGTHS = (1, 2, 5, 7, 9, 11, 13, 15, 17, 20)
# where to look for the pulse rate of a whole record
RECORD_HR_BAND = BandSpec(40 / 60, 180 / 60, 1)
# a const_beats window is 60 bpm by construction; its own estimate is confined near it
NORMALIZED_HR_BAND = BandSpec(55 / 60, 65 / 60, 1)

PEAK_SHORT_MA_S = 0.111
PEAK_LONG_MA_S = 0.667
PEAK_OFFSET_BETA = 0.02
PEAK_REFRACTORY_S = 0.25


@dataclass(frozen=True)
class SegmentPolicy:
    kind: str  # "const_time" or "const_beats"
    length: float

    def __post_init__(self):
        if self.kind not in ("const_time", "const_beats"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not self.length > 0:
            raise ValueError("policy length must be positive")
        if self.kind == "const_beats" and int(self.length) != self.length:
            raise ValueError("const_beats needs an integer number of beats")

    @classmethod
    def parse(cls, text: str) -> "SegmentPolicy":
        """Parse ``const_time:N`` or ``const_beats:N``."""
        kind, _, value = text.partition(":")
        if not value:
            raise ValueError(f"policy must look like const_beats:7, got {text!r}")
        num = float(value)
        if kind == "const_beats":
            num = int(num)
        return cls(kind, num)

    @property
    def target_len(self) -> int | None:
        if self.kind == "const_beats":
            return int(self.length) * int(NOMINAL_FS)
        return None

    def __str__(self):
        n = int(self.length) if float(self.length).is_integer() else self.length
        return f"{self.kind}:{n}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "length": self.length, "target_len": self.target_len}


@dataclass(frozen=True)
class GatingRules:
    sbp_range: tuple[float, float] = (75.0, 165.0)
    dbp_range: tuple[float, float] = (40.0, 80.0)
    hr_range: tuple[float, float] = (50.0, 140.0)
    snr_min: float = -7.0

    def __post_init__(self):
        for name in ("sbp_range", "dbp_range", "hr_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def to_dict(self) -> dict:
        return {"sbp_range": list(self.sbp_range), "dbp_range": list(self.dbp_range),
                "hr_range": list(self.hr_range), "snr_min": self.snr_min}

    @classmethod
    def from_dict(cls, d: dict) -> "GatingRules":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(eq=False)
class LabeledWindow:
    subject_id: str
    channels: np.ndarray  # (n_channels, length)
    sbp: float
    dbp: float
    hr: float
    snr: float
    source_offset: float

    def __post_init__(self):
        ch = np.atleast_2d(np.asarray(self.channels, dtype=float))
        if ch.shape[0] not in (1, 3):
            raise ValueError(f"windows carry 1 or 3 channels, got {ch.shape[0]}")
        self.channels = ch

    @property
    def pulse(self) -> np.ndarray:
        return self.channels[0]


@dataclass(eq=False)
class WindowSet:
    windows: list[LabeledWindow]
    policy: SegmentPolicy | None = None
    rejection_log: Counter = field(default_factory=Counter)
    rules: GatingRules | None = None
    # records that produced no windows at all, by reason
    record_failures: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    @property
    def subjects(self) -> list[str]:
        return sorted({w.subject_id for w in self.windows})

    @property
    def n_generated(self) -> int:
        return len(self.windows) + sum(self.rejection_log.values())

    @property
    def channel_count(self) -> int:
        return self.windows[0].channels.shape[0] if self.windows else 0

    @property
    def window_len(self) -> int:
        return self.windows[0].channels.shape[1] if self.windows else 0

    def inputs(self) -> np.ndarray:
        """Stacked channels, shape (n_windows, n_channels, length)."""
        return np.stack([w.channels for w in self.windows])

    def labels(self) -> np.ndarray:
        """Stacked (sbp, dbp) targets, shape (n_windows, 2)."""
        return np.array([[w.sbp, w.dbp] for w in self.windows], dtype=float).reshape(-1, 2)

    def subject_ids(self) -> np.ndarray:
        return np.array([w.subject_id for w in self.windows])

    def select(self, subjects: Iterable[str]) -> "WindowSet":
        keep = set(subjects)
        return WindowSet([w for w in self.windows if w.subject_id in keep],
                         self.policy, Counter(), self.rules)

    def subset(self, windows: Sequence[LabeledWindow]) -> "WindowSet":
        return WindowSet(list(windows), self.policy, Counter(), self.rules)


class RawWindow(NamedTuple):
    pulse: TimeSeries
    abp: TimeSeries
    start: int          # index into the source record
    stop: int
    offset: float       # seconds from record start


def _check_pair(ppg: TimeSeries, abp: TimeSeries):
    if ppg.fs != abp.fs or len(ppg) != len(abp):
        raise ValueError("PPG and ABP must share sampling rate and length")


def segment_const_time(ppg: TimeSeries, abp: TimeSeries, seconds: float) -> list[RawWindow]:
    """Non-overlapping ``seconds``-long windows; the trailing remainder is dropped."""
    _check_pair(ppg, abp)
    size = int(round(seconds * ppg.fs))
    if size < 2:
        raise ValueError("window shorter than two samples")
    out = []
    for k in range(len(ppg) // size):
        a, b = k * size, (k + 1) * size
        out.append(RawWindow(TimeSeries(ppg.samples[a:b], ppg.fs),
                             TimeSeries(abp.samples[a:b], abp.fs), a, b, a / ppg.fs))
    return out


def beat_window_bounds(n: int, fs: float, hr_bpm: float, beats: int) -> list[tuple[int, int]]:
    """Source index ranges of consecutive windows holding ``beats`` beats each."""
    span = beats * 60.0 / hr_bpm * fs
    size = int(round(span))
    out = []
    k = 0
    while True:
        a = int(round(k * span))
        if a + size > n:
            break
        out.append((a, a + size))
        k += 1
    return out


def segment_const_beats(ppg: TimeSeries, abp: TimeSeries, beats: int,
                        hr_bpm: float | None = None) -> list[RawWindow]:
    """Windows of ``beats`` beats, resampled to ``beats * 125`` samples at 125 Hz.

    ``hr_bpm`` defaults to the record's spectral heart rate. ABP windows go
    through the same resampling; use :attr:`RawWindow.start`/``stop`` to
    reach the unresampled source for labelling.
    """
    _check_pair(ppg, abp)
    beats = int(beats)
    if beats < 1:
        raise ValueError("beats must be positive")
    if hr_bpm is None:
        hr_bpm = estimate_heart_rate(ppg, RECORD_HR_BAND)
    target = beats * int(NOMINAL_FS)
    out = []
    for a, b in beat_window_bounds(len(ppg), ppg.fs, hr_bpm, beats):
        p = resample_to_length(TimeSeries(ppg.samples[a:b], ppg.fs), target)
        q = resample_to_length(TimeSeries(abp.samples[a:b], abp.fs), target)
        out.append(RawWindow(TimeSeries(p.samples, NOMINAL_FS),
                             TimeSeries(q.samples, NOMINAL_FS), a, b, a / ppg.fs))
    return out


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    width = max(1, int(width))
    return np.convolve(x, np.ones(width) / width, mode="same")


def detect_abp_peaks(abp: TimeSeries) -> tuple[np.ndarray, np.ndarray]:
    """Systolic peaks and diastolic troughs of an ABP waveform.

    Beats are blocks where a 111 ms moving average of the squared,
    positive-clipped band-passed signal exceeds a 667 ms moving average plus
    a small offset. The systolic peak is the raw maximum of each block; the
    diastolic trough is the raw minimum between consecutive systolic peaks,
    plus the trough preceding the first peak when it is interior.
    """
    x = abp.samples
    fs = abp.fs
    empty = (np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    if np.ptp(x) == 0:
        return empty
    try:
        band = BandSpec(0.5, min(8.0, 0.45 * fs), 2)
        y = bandpass(abp, band).samples
    except (InvalidBandError, InsufficientLengthError):
        return empty
    z = np.clip(y, 0, None) ** 2
    w1 = int(round(PEAK_SHORT_MA_S * fs))
    ma_peak = _moving_average(z, w1)
    ma_beat = _moving_average(z, int(round(PEAK_LONG_MA_S * fs)))
    above = ma_peak > ma_beat + PEAK_OFFSET_BETA * z.mean()

    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    n = len(x)
    peaks: list[int] = []
    refractory = int(round(PEAK_REFRACTORY_S * fs))
    for a, b in zip(starts, stops):
        if b - a < w1:
            continue
        p = a + int(np.argmax(x[a:b]))
        if p == 0 or p == n - 1 or not (x[p] >= x[p - 1] and x[p] >= x[p + 1]):
            continue
        if peaks and p - peaks[-1] < refractory:
            if x[p] > x[peaks[-1]]:
                peaks[-1] = p
            continue
        peaks.append(p)

    sys_idx = np.asarray(peaks, dtype=int)
    troughs = []
    if len(sys_idx):
        first = int(np.argmin(x[: sys_idx[0]])) if sys_idx[0] > 0 else 0
        if 0 < first:
            troughs.append(first)
        for p0, p1 in zip(sys_idx[:-1], sys_idx[1:]):
            troughs.append(p0 + int(np.argmin(x[p0:p1])))
    return sys_idx, np.asarray(troughs, dtype=int)


def _labels_from_peaks(x: np.ndarray, fs: float, sys_idx: np.ndarray, dia_idx: np.ndarray,
                       intervals: np.ndarray | None = None) -> tuple[float, float, float]:
    if len(sys_idx) < 1 or len(dia_idx) < 1:
        raise NoLabelError("window needs at least one systolic and one diastolic point")
    sbp = float(np.median(x[sys_idx]))
    dbp = float(np.median(x[dia_idx]))
    if intervals is None:
        intervals = np.diff(sys_idx)
    if len(intervals) == 0:
        raise NoLabelError("heart rate needs two systolic peaks")
    hr = float(np.median(60.0 * fs / np.asarray(intervals, dtype=float)))
    return sbp, dbp, hr


def ground_truth_bp(abp_window: TimeSeries, peaks=None) -> tuple[float, float, float]:
    """Median systolic and diastolic amplitude and median heart rate of a window.

    ``peaks`` may carry ``(sys, dia)`` indices already detected for this
    window; otherwise they are detected here.
    """
    sys_idx, dia_idx = peaks if peaks is not None else detect_abp_peaks(abp_window)
    return _labels_from_peaks(abp_window.samples, abp_window.fs, sys_idx, dia_idx)


def apply_gates(w: LabeledWindow, rules: GatingRules) -> str | None:
    """Name of the first violated rule, or ``None`` if the window is accepted.

    All intervals are closed.
    """
    checks = (
        ("sbp_range", rules.sbp_range[0] <= w.sbp <= rules.sbp_range[1]),
        ("dbp_range", rules.dbp_range[0] <= w.dbp <= rules.dbp_range[1]),
        ("hr_range", rules.hr_range[0] <= w.hr <= rules.hr_range[1]),
        ("snr_min", w.snr >= rules.snr_min),
    )
    for name, ok in checks:
        if not ok:
            return name
    return None


def window_snr(pulse: TimeSeries, kind: str, fallback_hr: float) -> float:
    """SNR of a window using the window's own spectral heart rate.

    ``const_beats`` windows are searched only near 60 bpm; windows too short
    for a spectral estimate fall back to ``fallback_hr``.
    """
    band = NORMALIZED_HR_BAND if kind == "const_beats" else BandSpec(50 / 60, 140 / 60, 1)
    try:
        hr = estimate_heart_rate(pulse, band)
    except (InsufficientLengthError, NoDominantComponentError, InvalidBandError):
        hr = fallback_hr
    return snr_db(pulse, float(np.clip(hr, 30, 240)))


def finish_window(subject_id: str, pulse: TimeSeries, sbp: float, dbp: float, hr: float,
                  offset: float, kind: str, with_derivatives: bool,
                  snr_fallback_hr: float) -> LabeledWindow:
    """Standardize the pulse, add derivative channels, attach SNR."""
    z = zscore(pulse)
    chans = [z.samples]
    if with_derivatives:
        chans.append(zscore(derivative(z, 1)).samples)
        chans.append(zscore(derivative(z, 2)).samples)
    snr = window_snr(z, kind, snr_fallback_hr)
    return LabeledWindow(subject_id, np.vstack(chans), sbp, dbp, hr, snr, offset)


def _window_peaks(sys_idx, dia_idx, a, b):
    s = sys_idx[(sys_idx >= a) & (sys_idx < b)]
    d = dia_idx[(dia_idx >= a) & (dia_idx < b)]
    # one interval per systolic peak in the window, using the record neighbour if needed
    if len(s) >= 2:
        iv = np.diff(s)
    elif len(s) == 1:
        pos = int(np.searchsorted(sys_idx, s[0]))
        if pos + 1 < len(sys_idx):
            iv = np.array([sys_idx[pos + 1] - s[0]])
        elif pos > 0:
            iv = np.array([s[0] - sys_idx[pos - 1]])
        else:
            iv = np.zeros(0)
    else:
        iv = np.zeros(0)
    return s - a, d - a, iv


def process_record(subject_id: str, ppg: TimeSeries, abp: TimeSeries, policy: SegmentPolicy,
                   rules: GatingRules, with_derivatives: bool = False,
                   band: BandSpec = DEFAULT_BAND):
    """Windows of one record.

    Returns ``(accepted, rejected, failure)``: the accepted windows, a counter
    of per-window rejection reasons, and a record-level failure reason (or
    ``None``) when no windows could be cut at all.
    """
    rejected: Counter = Counter()
    try:
        ppg_f = bandpass(ppg, band)
    except (InsufficientLengthError, InvalidBandError):
        return [], rejected, "record_too_short"
    sys_idx, dia_idx = detect_abp_peaks(abp)

    if policy.kind == "const_time":
        raws = segment_const_time(ppg_f, abp, policy.length)
        fallback = None
    else:
        try:
            record_hr = estimate_heart_rate(ppg_f, RECORD_HR_BAND)
        except (InsufficientLengthError, NoDominantComponentError):
            return [], rejected, "hr_estimation"
        raws = segment_const_beats(ppg_f, abp, int(policy.length), record_hr)
        fallback = 60.0

    accepted = []
    for raw in raws:
        s, d, iv = _window_peaks(sys_idx, dia_idx, raw.start, raw.stop)
        source = abp.samples[raw.start:raw.stop]
        try:
            sbp, dbp, hr = _labels_from_peaks(source, abp.fs, s, d, iv)
            w = finish_window(subject_id, raw.pulse, sbp, dbp, hr, raw.offset, policy.kind,
                              with_derivatives, fallback if fallback else hr)
        except NoLabelError:
            rejected["no_label"] += 1
            continue
        except ZeroVarianceError:
            rejected["zero_variance"] += 1
            continue
        except UndefinedSNRError:
            rejected["snr_min"] += 1
            continue
        reason = apply_gates(w, rules)
        if reason:
            rejected[reason] += 1
        else:
            accepted.append(w)
    return accepted, rejected, None


def build_window_set(records, policy: SegmentPolicy, rules: GatingRules | None = None,
                     with_derivatives: bool = False) -> WindowSet:
    """Band-pass, segment, label, normalize and gate every record.

    ``records`` is an iterable of ``(subject_id, ppg, abp)``. Output windows
    are ordered by subject id, then by offset within the record.
    """
    rules = rules or GatingRules()
    records = list(records)
    if not records:
        raise ValueError("no records to process")
    windows: list[LabeledWindow] = []
    log: Counter = Counter()
    failures: Counter = Counter()
    for sid, ppg, abp in records:
        acc, rej, failure = process_record(str(sid), ppg, abp, policy, rules,
                                           with_derivatives)
        windows.extend(acc)
        log.update(rej)
        if failure:
            failures[failure] += 1
    windows.sort(key=lambda w: (w.subject_id, w.source_offset))
    return WindowSet(windows, policy, log, rules, failures)

"""Seeded synthetic cohorts of PPG/ABP record pairs and RGB traces.

Each subject gets its own random stream derived from ``(seed, index)`` so
cohorts are identical whether subjects are generated in order, out of order
or in parallel.

Beat model
----------
* ABP: per-beat waveform on the sample grid whose trough (at the beat onset)
  equals the programmed DBP and whose maximum equals the programmed SBP.
* PPG: two Gaussians per beat (systolic wave plus a later secondary wave).
  The secondary wave's delay (as a fraction of the beat period) follows the
  SBP and its relative amplitude follows the DBP, both scaled by
  ``morphology_coupling``. With coupling 0 every beat has the same shape.
* RGB: the clean PPG riding on the green channel of a constant skin tone.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dsp import TimeSeries
from .rppg import RgbTrace

SBP_CLIP = (70.0, 180.0)
DBP_CLIP = (35.0, 90.0)
# mmHg per unit of the latent shape coordinates
SBP_SHAPE_SCALE = 20.0
DBP_SHAPE_SCALE = 10.0

SYSTOLIC_PHASE = 0.22
SYSTOLIC_WIDTH = 0.09
SECONDARY_WIDTH = 0.11
FINGERPRINT_SCALE = 0.3
DELAY_CENTER, DELAY_SLOPE, DELAY_RANGE = 0.29, 0.04, (0.18, 0.40)
RATIO_CENTER, RATIO_SLOPE, RATIO_RANGE = 0.50, 0.12, (0.15, 0.85)
SKIN_TONE = (160.0, 110.0, 90.0)


@dataclass(frozen=True)
class CohortSpec:
    n_subjects: int = 20
    bp_mean: tuple[float, float] = (120.0, 65.0)
    bp_between_subject_std: float = 12.0
    bp_within_subject_std: float = 4.0
    bp_skew: float = 0.0
    hr_range: tuple[float, float] = (60.0, 100.0)
    morphology_coupling: float = 1.0
    noise_std: float = 0.0
    duration_s: float = 300.0
    fs: float = 125.0
    seed: int = 0
    # subject-specific shape offsets unrelated to BP
    morphology_jitter: float = 0.0
    hr_within_subject_std: float = 1.5
    rgb_fps: float = 30.0
    rgb_pulse_amplitude: float = 0.01
    label_interval_s: float = 60.0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be at least 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0.0 <= self.morphology_coupling <= 1.0:
            raise ValueError("morphology_coupling must lie in [0, 1]")
        lo, hi = self.hr_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid hr_range {self.hr_range}")
        if self.duration_s <= 0 or self.fs <= 0 or self.rgb_fps <= 0:
            raise ValueError("duration_s, fs and rgb_fps must be positive")
        object.__setattr__(self, "bp_mean", tuple(float(v) for v in self.bp_mean))
        object.__setattr__(self, "hr_range", tuple(float(v) for v in self.hr_range))

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown cohort fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bp_mean"] = list(self.bp_mean)
        d["hr_range"] = list(self.hr_range)
        return d


@dataclass(eq=False)
class BeatTruth:
    onset: np.ndarray          # ABP trough (beat onset) sample indices
    peak: np.ndarray           # ABP systolic peak sample indices
    sbp: np.ndarray
    dbp: np.ndarray
    hr: np.ndarray             # instantaneous bpm of each beat
    delay: np.ndarray          # PPG secondary-wave delay, fraction of period
    ratio: np.ndarray          # PPG secondary-wave relative amplitude
    fs: float = 125.0

    @property
    def time(self) -> np.ndarray:
        return self.peak / self.fs


@dataclass(eq=False)
class SubjectRecord:
    subject_id: str
    ppg: TimeSeries
    abp: TimeSeries
    rgb: RgbTrace
    truth: BeatTruth
    baseline: tuple[float, float] = field(default=(0.0, 0.0))


def subject_id(index: int) -> str:
    return f"S{index:04d}"


def _skewnorm_standard(rng: np.random.Generator, a: float) -> float:
    """One skew-normal draw rescaled to zero mean and unit variance."""
    delta = a / np.sqrt(1.0 + a * a)
    u, v = rng.standard_normal(2)
    z = delta * abs(u) + np.sqrt(1.0 - delta * delta) * v
    mean = delta * np.sqrt(2.0 / np.pi)
    sd = np.sqrt(1.0 - 2.0 * delta * delta / np.pi)
    return float((z - mean) / sd)


def _ar1(rng: np.random.Generator, n: int, sd: float, tau: float) -> np.ndarray:
    """Stationary AR(1) path with std ``sd``, clipped to +-3 sd."""
    if n == 0:
        return np.zeros(0)
    if sd == 0:
        return np.zeros(n)
    rho = np.exp(-1.0 / tau)
    eps = rng.standard_normal(n) * sd * np.sqrt(1.0 - rho * rho)
    x = np.empty(n)
    x[0] = rng.standard_normal() * sd
    for i in range(1, n):
        x[i] = rho * x[i - 1] + eps[i]
    return np.clip(x, -3 * sd, 3 * sd)


def _abp_shape(phase: np.ndarray) -> np.ndarray:
    """ABP beat template: zero at onset, single maximum, notch, runoff to zero."""
    peak = 0.15
    rise = np.sin(0.5 * np.pi * np.clip(phase / peak, 0, 1)) ** 2
    tau = 0.35
    end = np.exp(-(1 - peak) / tau)
    decay = (np.exp(-(phase - peak) / tau) - end) / (1 - end)
    notch = 0.12 * np.exp(-0.5 * ((phase - 0.42) / 0.04) ** 2) * (1 - phase)
    return np.where(phase <= peak, rise, decay + notch)


def _blend(phase: np.ndarray) -> np.ndarray:
    s = np.clip((phase - 0.5) / 0.5, 0, 1)
    return s * s * (3 - 2 * s)


def synth_subject(spec: CohortSpec, subject_index: int) -> SubjectRecord:
    """Generate one subject, fully determined by ``(spec.seed, subject_index)``."""
    if not 0 <= subject_index < spec.n_subjects:
        raise IndexError(f"subject_index {subject_index} outside cohort")
    rng = np.random.default_rng([int(spec.seed), int(subject_index)])
    fs = spec.fs
    n = int(round(spec.duration_s * fs))

    std_b = spec.bp_between_subject_std
    zs = _skewnorm_standard(rng, spec.bp_skew)
    zd = 0.6 * zs + 0.8 * _skewnorm_standard(rng, spec.bp_skew)
    sbp0 = float(np.clip(spec.bp_mean[0] + std_b * zs, *SBP_CLIP))
    dbp0 = float(np.clip(spec.bp_mean[1] + 0.5 * std_b * zd, *DBP_CLIP))
    dbp0 = min(dbp0, sbp0 - 20.0)
    hr0 = rng.uniform(*spec.hr_range)
    jitter = rng.standard_normal(2) * spec.morphology_jitter
    # BP-independent width scale: identifies the subject without informing on BP.
    # Drawn from its own stream so jitter-free cohorts are unaffected.
    fp = np.random.default_rng([int(spec.seed), int(subject_index), 1]).standard_normal()
    width = np.exp(FINGERPRINT_SCALE * spec.morphology_jitter * fp)

    # beat onsets: enough beats to cover the record at the fastest plausible rate
    max_beats = int(np.ceil(spec.duration_s * max(spec.hr_range[1], hr0) / 60 * 1.5)) + 4
    hr = np.clip(hr0 + _ar1(rng, max_beats, spec.hr_within_subject_std, 20.0),
                 spec.hr_range[0], spec.hr_range[1])
    onset_t = np.concatenate([[0.0], np.cumsum(60.0 / hr)])
    onset = np.round(onset_t * fs).astype(int)
    n_beats = int(np.searchsorted(onset, n, side="left"))
    onset = onset[: n_beats + 1]
    hr = hr[: n_beats + 1]

    w_s = _ar1(rng, n_beats + 1, spec.bp_within_subject_std, 30.0)
    w_d = 0.5 * (0.5 * w_s + np.sqrt(0.75) * _ar1(
        rng, n_beats + 1, spec.bp_within_subject_std, 30.0))
    sbp = np.clip(sbp0 + w_s, *SBP_CLIP)
    dbp = np.minimum(np.clip(dbp0 + w_d, *DBP_CLIP), sbp - 15.0)

    c = spec.morphology_coupling
    u1 = c * (sbp - spec.bp_mean[0]) / SBP_SHAPE_SCALE + jitter[0]
    u2 = c * (dbp - spec.bp_mean[1]) / DBP_SHAPE_SCALE + jitter[1]
    delay = np.clip(DELAY_CENTER + DELAY_SLOPE * u1, *DELAY_RANGE)
    ratio = np.clip(RATIO_CENTER + RATIO_SLOPE * u2, *RATIO_RANGE)

    abp = np.empty(n)
    ppg = np.zeros(n)
    peaks = np.empty(n_beats, dtype=int)
    idx = np.arange(n)
    for k in range(n_beats):
        a, b = onset[k], onset[k + 1]
        period = b - a
        phase = np.arange(period) / period
        w = _abp_shape(phase)
        w = (w - w[0]) / (w.max() - w[0])
        seg = dbp[k] + (sbp[k] - dbp[k]) * w + (dbp[k + 1] - dbp[k]) * _blend(phase)
        stop = min(b, n)
        abp[a:stop] = seg[: stop - a]
        peaks[k] = a + int(np.argmax(w))

        # PPG Gaussians evaluated on a neighbourhood wide enough for their tails
        lo, hi = max(0, a - period), min(n, b + period)
        ph = (idx[lo:hi] - a) / period
        ppg[lo:hi] += np.exp(-0.5 * ((ph - SYSTOLIC_PHASE) / (SYSTOLIC_WIDTH * width)) ** 2)
        ppg[lo:hi] += ratio[k] * np.exp(
            -0.5 * ((ph - SYSTOLIC_PHASE - delay[k]) / (SECONDARY_WIDTH * width)) ** 2)

    pp = float(np.mean(sbp[:n_beats] - dbp[:n_beats])) if n_beats else 40.0
    ppg_amp = float(np.ptp(ppg)) or 1.0
    ppg_clean = ppg / ppg_amp
    noise = spec.noise_std
    ppg_obs = ppg_clean + rng.standard_normal(n) * noise
    abp_obs = abp + rng.standard_normal(n) * noise * pp * 0.1

    # RGB trace at video frame rate
    n_frames = int(np.floor(spec.duration_s * spec.rgb_fps))
    t_frames = np.arange(n_frames) / spec.rgb_fps
    pulse = np.interp(t_frames, idx / fs, ppg_clean)
    pulse = pulse - pulse.mean()
    tone = np.asarray(SKIN_TONE) * (1.0 + 0.05 * rng.standard_normal(3))
    amp = spec.rgb_pulse_amplitude
    rgb = np.tile(tone[:, None], (1, n_frames))
    rgb[1] *= 1.0 + amp * pulse
    rgb += rng.standard_normal((3, n_frames)) * noise * amp * tone[1]
    rgb = np.maximum(rgb, 1e-3)

    truth = BeatTruth(onset=onset[:n_beats].copy(), peak=peaks, sbp=sbp[:n_beats].copy(),
                      dbp=dbp[:n_beats].copy(), hr=hr[:n_beats].copy(),
                      delay=delay[:n_beats].copy(), ratio=ratio[:n_beats].copy(), fs=fs)
    labels = _bedside_labels(truth, spec.duration_s, spec.label_interval_s)
    sid = subject_id(subject_index)
    trace = RgbTrace(r=rgb[0], g=rgb[1], b=rgb[2], fps=spec.rgb_fps,
                     subject_id=sid, bp_labels=labels)
    return SubjectRecord(subject_id=sid, ppg=TimeSeries(ppg_obs, fs),
                         abp=TimeSeries(abp_obs, fs), rgb=trace, truth=truth,
                         baseline=(sbp0, dbp0))


def _bedside_labels(truth: BeatTruth, duration_s: float, interval_s: float):
    """Cuff-style labels: the programmed BP of the beat nearest each label time."""
    if len(truth.peak) == 0:
        return []
    times = np.arange(0.0, duration_s, interval_s)
    beat_t = truth.time
    out = []
    for t in times:
        k = int(np.argmin(np.abs(beat_t - t)))
        out.append((float(t), float(truth.sbp[k]), float(truth.dbp[k])))
    return out


def synth_cohort(spec: CohortSpec) -> list[SubjectRecord]:
    return [synth_subject(spec, i) for i in range(spec.n_subjects)]

"""Subject-disjoint splitting, error reporting and the leave-one-subject-out driver."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import ContaminationError, DegenerateTestError
from .models import Checkpoint, TrainConfig, check_disjoint, finetune_final_layer, personal_split
from .segmentation import GatingRules, WindowSet

TARGETS = ("sbp", "dbp")
STD_DEFINITION = "population std of absolute errors"


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f <= 0 for f in fr) or sum(fr) > 1 + 1e-9:
            raise ValueError(f"split fractions must be positive and sum to <= 1, got {fr}")


def subject_split(windows: WindowSet, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle of subjects, cut by fractions into (train, val, test)."""
    subjects = windows.subjects
    n = len(subjects)
    if n < 3:
        raise ValueError(f"subject split needs at least 3 subjects, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [subjects[i] for i in order]
    n_train = int(math.floor(spec.train * n + 1e-9))
    n_val = int(math.floor(spec.val * n + 1e-9))
    n_test = int(math.floor(spec.test * n + 1e-9))
    for name, k in (("train", n_train), ("val", n_val), ("test", n_test)):
        if k == 0:
            raise ValueError(f"{name} partition is empty for {n} subjects")
    parts = (shuffled[:n_train], shuffled[n_train:n_train + n_val],
             shuffled[n_train + n_val:n_train + n_val + n_test])
    out = tuple(windows.select(p) for p in parts)
    check_disjoint(train=out[0], val=out[1], test=out[2])
    return out


def sample_split(windows: WindowSet, spec: SplitSpec = SplitSpec()):
    """Leaky split for comparison only: windows are shuffled into train, val
    and test regardless of subject. Do not use for reported results.
    """
    n = len(windows)
    idx = np.random.default_rng([spec.seed, 7]).permutation(n)
    n_train = int(math.floor(spec.train * n + 1e-9))
    n_val = int(math.floor(spec.val * n + 1e-9))
    n_test = int(math.floor(spec.test * n + 1e-9))
    cuts = (idx[:n_train], idx[n_train:n_train + n_val],
            idx[n_train + n_val:n_train + n_val + n_test])
    return tuple(windows.subset([windows.windows[i] for i in sorted(c)]) for c in cuts)


class MaeResult(NamedTuple):
    sbp_mae: float
    dbp_mae: float
    sbp_std: float
    dbp_std: float


def _as_pairs(a) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape(-1, 2)


def mae(pred, truth) -> MaeResult:
    """Mean and population standard deviation of the absolute errors."""
    p, t = _as_pairs(pred), _as_pairs(truth)
    if p.shape != t.shape:
        raise ValueError(f"pred and truth lengths differ: {len(p)} vs {len(t)}")
    if len(p) == 0:
        raise ValueError("mae of an empty set")
    err = np.abs(p - t)
    m, s = err.mean(axis=0), err.std(axis=0)
    return MaeResult(float(m[0]), float(m[1]), float(s[0]), float(s[1]))


@dataclass
class Bin:
    lo: float
    hi: float
    count: int
    mae: float | None  # None for empty bins


def binned_mae(pred, truth, bin_width: float = 10.0, value_range=(75.0, 165.0)) -> list[Bin]:
    """MAE per ground-truth bin of one target.

    Bins start at ``value_range[0]``; they are left-closed/right-open except
    the last, which is closed.
    """
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError("pred and truth lengths differ")
    lo, hi = map(float, value_range)
    if np.any((t < lo) | (t > hi)):
        raise ValueError(f"truth values outside [{lo}, {hi}]")
    n_bins = int(math.ceil((hi - lo) / bin_width - 1e-9))
    edges = lo + bin_width * np.arange(n_bins + 1)
    edges[-1] = hi
    which = np.minimum(((t - lo) // bin_width).astype(int), n_bins - 1)
    err = np.abs(p - t)
    out = []
    for k in range(n_bins):
        sel = which == k
        c = int(sel.sum())
        out.append(Bin(float(edges[k]), float(edges[k + 1]), c,
                       float(err[sel].mean()) if c else None))
    return out


class TTestResult(NamedTuple):
    t: float
    df: int
    p: float


def paired_t_test(errors_a, errors_b) -> TTestResult:
    """Two-sided paired t-test on ``a - b``."""
    a = np.asarray(errors_a, dtype=float).ravel()
    b = np.asarray(errors_b, dtype=float).ravel()
    if a.shape != b.shape or len(a) < 2:
        raise ValueError("paired t-test needs two equal-length samples of size >= 2")
    d = a - b
    n = len(d)
    if np.all(d == 0):
        return TTestResult(0.0, n - 1, 1.0)
    sd = d.std(ddof=1)
    if sd == 0 or sd <= 1e-14 * np.abs(d).max():
        raise DegenerateTestError("differences have zero variance")
    t = d.mean() / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), n - 1)
    return TTestResult(float(t), n - 1, float(min(max(p, 0.0), 1.0)))


class BhsResult(NamedTuple):
    passed: bool
    fraction: float


def bhs_aami_check(pred, truth, threshold: float = 10.0,
                   required_fraction: float = 0.85) -> BhsResult:
    """Pass iff at least ``required_fraction`` of absolute errors are <= ``threshold``."""
    err = np.abs(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)).ravel()
    if err.size == 0:
        raise ValueError("bhs_aami_check of an empty set")
    hits = int(np.count_nonzero(err <= threshold))
    # integer comparison keeps e.g. 17/20 exactly on the 0.85 boundary
    passed = hits >= required_fraction * err.size - 1e-9
    return BhsResult(bool(passed), hits / err.size)


# ----------------------------------------------------------------- reports

@dataclass
class TargetReport:
    mae: float
    std: float
    bins: list[Bin]
    bhs_fraction: float

    def to_dict(self):
        return {"mae": self.mae, "std": self.std, "bhs_fraction": self.bhs_fraction,
                "bin_edges": [b.lo for b in self.bins] + ([self.bins[-1].hi] if self.bins else []),
                "bin_counts": [b.count for b in self.bins],
                "bin_mae": [b.mae for b in self.bins]}


@dataclass
class EvalReport:
    model: str
    n_windows: int
    n_subjects: int
    sbp: TargetReport
    dbp: TargetReport
    baseline: "EvalReport | None" = None
    extra: dict = field(default_factory=dict)

    def target(self, name: str) -> TargetReport:
        return getattr(self, name)

    def to_dict(self) -> dict:
        d = {"model": self.model, "n_windows": self.n_windows, "n_subjects": self.n_subjects,
             "std_definition": STD_DEFINITION,
             "sbp": self.sbp.to_dict(), "dbp": self.dbp.to_dict()}
        if self.baseline is not None:
            d["baseline"] = self.baseline.to_dict()
        if self.extra:
            d["extra"] = self.extra
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def bins_csv(self) -> str:
        """One row per (model, target, bin), for plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "target", "bin_lo", "bin_hi", "count", "mae"])
        for rep in (self, self.baseline):
            if rep is None:
                continue
            for name in TARGETS:
                for b in rep.target(name).bins:
                    w.writerow([rep.model, name, repr(b.lo), repr(b.hi), b.count,
                                "" if b.mae is None else repr(b.mae)])
        return buf.getvalue()


def evaluate(pred, truth, subjects, model: str = "model",
             rules: GatingRules | None = None, bin_width: float = 10.0) -> EvalReport:
    rules = rules or GatingRules()
    p, t = _as_pairs(pred), _as_pairs(truth)
    m = mae(p, t)
    reports = []
    for j, rng in enumerate((rules.sbp_range, rules.dbp_range)):
        bins = binned_mae(p[:, j], t[:, j], bin_width, rng)
        reports.append(TargetReport(m[j], m[2 + j], bins, bhs_aami_check(p[:, j], t[:, j]).fraction))
    return EvalReport(model, len(p), len(set(subjects)), reports[0], reports[1])


def mean_regressor(train_labels) -> np.ndarray:
    return _as_pairs(train_labels).mean(axis=0)


def evaluate_checkpoint(ckpt: Checkpoint, trainset: WindowSet, testset: WindowSet,
                        model: str = "model", rules: GatingRules | None = None) -> EvalReport:
    """Evaluate on ``testset`` with the train-set mean regressor as baseline."""
    check_disjoint(train=trainset, test=testset)
    truth = testset.labels()
    rep = evaluate(ckpt.predict(testset.inputs()), truth, testset.subject_ids(), model, rules)
    base = np.tile(mean_regressor(trainset.labels()), (len(truth), 1))
    rep.baseline = evaluate(base, truth, testset.subject_ids(), "mean_regressor", rules)
    return rep


# -------------------------------------------------------------------- LOSO

@dataclass
class LosoResult:
    per_subject: dict[str, EvalReport]
    pooled: EvalReport
    personalization: bool
    folds: list[dict]
    predictions: dict[str, np.ndarray]

    def table_row(self) -> dict:
        label = "with personalization" if self.personalization else "no personalization"
        b = self.pooled.baseline
        return {"setting": label,
                "model_sbp_mean": self.pooled.sbp.mae, "model_sbp_std": self.pooled.sbp.std,
                "model_dbp_mean": self.pooled.dbp.mae, "model_dbp_std": self.pooled.dbp.std,
                "mean_sbp_mean": b.sbp.mae, "mean_sbp_std": b.sbp.std,
                "mean_dbp_mean": b.dbp.mae, "mean_dbp_std": b.dbp.std}


def _rules_covering(rules: GatingRules, truth: np.ndarray) -> GatingRules:
    """Widen the bin range when labels fall outside the gating ranges."""
    s_lo = min(rules.sbp_range[0], float(np.floor(truth[:, 0].min())))
    s_hi = max(rules.sbp_range[1], float(np.ceil(truth[:, 0].max())))
    d_lo = min(rules.dbp_range[0], float(np.floor(truth[:, 1].min())))
    d_hi = max(rules.dbp_range[1], float(np.ceil(truth[:, 1].max())))
    return GatingRules((s_lo, s_hi), (d_lo, d_hi), rules.hr_range, rules.snr_min)


def loso_experiment(windows: WindowSet, base_checkpoint: Checkpoint,
                    cfg: TrainConfig = TrainConfig(), personalization: bool = False,
                    frac: float = 0.2, rules: GatingRules | None = None) -> LosoResult:
    """Leave-one-subject-out fine-tuning of the final layer.

    For each test subject the next subject id (cyclically) validates and the
    others train. With ``personalization`` the first ``ceil(frac * N)``
    windows of the test subject join the training data and only the
    remainder is evaluated. The mean regressor is re-fit on each fold's
    training labels.
    """
    subjects = windows.subjects
    if len(subjects) < 3:
        raise ValueError("leave-one-subject-out needs at least 3 subjects")
    rules = rules or windows.rules or GatingRules()
    per_subject, folds = {}, []
    preds, truths, base_preds, sids = [], [], [], []
    for i, test_id in enumerate(subjects):
        val_id = subjects[(i + 1) % len(subjects)]
        train_ids = [s for s in subjects if s not in (test_id, val_id)]
        train = windows.select(train_ids)
        val = windows.select([val_id])
        test = windows.select([test_id])
        tune_n = 0
        if personalization:
            tune, test = personal_split(test, frac)
            train = train.subset(train.windows + tune.windows)
            tune_n = len(tune)
            tune_offsets = {w.source_offset for w in tune.windows}
            if tune_offsets & {w.source_offset for w in test.windows}:
                raise ContaminationError(f"tuning and test windows overlap for {test_id}")
        check_disjoint(train=train.select(train_ids), val=val, test=test)
        ckpt, _ = finetune_final_layer(base_checkpoint, train, val, cfg, check=False)
        truth = test.labels()
        pred = ckpt.predict(test.inputs())
        base = np.tile(mean_regressor(train.labels()), (len(truth), 1))
        fold_rules = _rules_covering(rules, truth)
        rep = evaluate(pred, truth, [test_id] * len(truth), "model", fold_rules)
        rep.baseline = evaluate(base, truth, [test_id] * len(truth), "mean_regressor", fold_rules)
        per_subject[test_id] = rep
        folds.append({"test": test_id, "val": val_id, "n_train": len(train),
                      "n_tune": tune_n, "n_test": len(test)})
        preds.append(pred)
        truths.append(truth)
        base_preds.append(base)
        sids += [test_id] * len(truth)
    truth = np.vstack(truths)
    pooled_rules = _rules_covering(rules, truth)
    pooled = evaluate(np.vstack(preds), truth, sids, "model", pooled_rules)
    pooled.baseline = evaluate(np.vstack(base_preds), truth, sids, "mean_regressor", pooled_rules)
    return LosoResult(per_subject, pooled, personalization, folds,
                      {"pred": np.vstack(preds), "truth": truth,
                       "baseline": np.vstack(base_preds), "subject": np.array(sids)})

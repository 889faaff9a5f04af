"""On-disk formats: record CSVs with JSON sidecars, RGB traces, window sets.

Floats are written with ``repr`` so every value round-trips exactly and
repeated runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from pathlib import Path

import numpy as np

from .dsp import TimeSeries
from .rppg import RgbTrace
from .segmentation import GatingRules, LabeledWindow, SegmentPolicy, WindowSet


def _fmt(v: float) -> str:
    return repr(float(v))


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ----------------------------------------------------------------- records

def write_record(directory, subject_id: str, ppg: TimeSeries, abp: TimeSeries) -> Path:
    """``<id>.csv`` with header ``t,ppg,abp`` plus ``<id>.json`` {subject_id, fs}."""
    directory = Path(directory)
    path = directory / f"{subject_id}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "ppg", "abp"])
        for t, p, a in zip(ppg.t, ppg.samples, abp.samples):
            w.writerow([_fmt(t), _fmt(p), _fmt(a)])
    dump_json({"subject_id": subject_id, "fs": ppg.fs}, directory / f"{subject_id}.json")
    return path


def read_record(csv_path):
    """(subject_id, ppg, abp) from a record CSV and its sidecar."""
    csv_path = Path(csv_path)
    meta = load_json(csv_path.with_suffix(".json"))
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    with open(csv_path) as fh:
        header = fh.readline().strip().split(",")
    if header != ["t", "ppg", "abp"]:
        raise ValueError(f"{csv_path}: expected header t,ppg,abp, got {header}")
    fs = float(meta["fs"])
    return str(meta["subject_id"]), TimeSeries(data[:, 1], fs), TimeSeries(data[:, 2], fs)


def write_rgb(directory, trace: RgbTrace) -> Path:
    """``<id>.csv`` with header ``t,r,g,b`` plus sidecar {subject_id, fps, labels}."""
    directory = Path(directory)
    path = directory / f"{trace.subject_id}.csv"
    t = np.arange(len(trace)) / trace.fps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "r", "g", "b"])
        for row in zip(t, trace.r, trace.g, trace.b):
            w.writerow([_fmt(v) for v in row])
    labels = [{"t": lt, "sbp": s, "dbp": d} for lt, s, d in trace.bp_labels]
    dump_json({"subject_id": trace.subject_id, "fps": trace.fps, "labels": labels},
              directory / f"{trace.subject_id}.json")
    return path


def read_rgb(csv_path) -> RgbTrace:
    csv_path = Path(csv_path)
    meta = load_json(csv_path.with_suffix(".json"))
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    labels = [(lab["t"], lab["sbp"], lab["dbp"]) for lab in meta.get("labels", [])]
    return RgbTrace(data[:, 1], data[:, 2], data[:, 3], float(meta["fps"]),
                    str(meta["subject_id"]), labels)


def scan_inputs(directory):
    """Classify a directory of sidecar-described inputs.

    Returns ``("ppg", [(sid, ppg, abp), ...])`` or ``("rppg", [RgbTrace, ...])``
    depending on the sidecars (``fps`` + ``labels`` marks an RGB trace).
    """
    directory = Path(directory)
    kinds, paths = set(), []
    for side in sorted(directory.glob("*.json")):
        csv_path = side.with_suffix(".csv")
        if not csv_path.exists():
            continue
        meta = load_json(side)
        if "subject_id" not in meta:
            continue
        kinds.add("rppg" if "fps" in meta else "ppg")
        paths.append(csv_path)
    if not paths:
        raise FileNotFoundError(f"no record CSV + sidecar pairs in {directory}")
    if len(kinds) > 1:
        raise ValueError(f"{directory} mixes PPG records and RGB traces")
    kind = kinds.pop()
    if kind == "ppg":
        return kind, [read_record(p) for p in paths]
    return kind, [read_rgb(p) for p in paths]


# ------------------------------------------------------------- window sets

def write_windowset(csv_path, ws: WindowSet, extra: dict | None = None) -> Path:
    """Window CSV plus a ``.json`` manifest next to it."""
    csv_path = Path(csv_path)
    n_ch, n = ws.channel_count, ws.window_len
    header = ["subject_id", "window_id", "sbp", "dbp", "hr", "snr"]
    header += [f"ch{c}_{i}" for c in range(n_ch) for i in range(n)]
    counters: Counter = Counter()
    offsets = []
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for win in ws.windows:
            k = counters[win.subject_id]
            counters[win.subject_id] += 1
            offsets.append(win.source_offset)
            w.writerow([win.subject_id, k, _fmt(win.sbp), _fmt(win.dbp), _fmt(win.hr),
                        _fmt(win.snr)] + [_fmt(v) for v in win.channels.ravel()])
    manifest = {
        "policy": ws.policy.to_dict() if ws.policy else None,
        "rules": ws.rules.to_dict() if ws.rules else None,
        "channel_count": n_ch,
        "window_len": n,
        "n_windows": len(ws),
        "rejection_log": dict(sorted(ws.rejection_log.items())),
        "record_failures": dict(sorted(ws.record_failures.items())),
        "source_offsets": offsets,
    }
    if extra:
        manifest.update(extra)
    dump_json(manifest, csv_path.with_suffix(".json"))
    return csv_path


def read_windowset(csv_path) -> WindowSet:
    csv_path = Path(csv_path)
    man_path = csv_path.with_suffix(".json")
    manifest = load_json(man_path) if man_path.exists() else {}
    offsets = manifest.get("source_offsets")
    windows = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:6] != ["subject_id", "window_id", "sbp", "dbp", "hr", "snr"]:
            raise ValueError(f"{csv_path}: not a window-set CSV")
        n_ch = len({h.split("_")[0] for h in header[6:]})
        for i, row in enumerate(reader):
            values = np.array(row[6:], dtype=float)
            offset = float(offsets[i]) if offsets else float(row[1])
            windows.append(LabeledWindow(row[0], values.reshape(n_ch, -1), float(row[2]),
                                         float(row[3]), float(row[4]), float(row[5]), offset))
    policy = rules = None
    if manifest.get("policy"):
        policy = SegmentPolicy(manifest["policy"]["kind"], manifest["policy"]["length"])
    if manifest.get("rules"):
        rules = GatingRules.from_dict(manifest["rules"])
    return WindowSet(windows, policy, Counter(manifest.get("rejection_log", {})), rules,
                     Counter(manifest.get("record_failures", {})))

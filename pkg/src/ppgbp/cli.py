"""Batch front-end: ``ppgbp {synth,preprocess,train,finetune,eval,report}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 contamination
guard. Every output directory receives a ``manifest.json`` with the config
hash, input file hashes and tool version; no timestamps, so identical runs
give identical manifests.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import shutil
import sys
import tempfile
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ContaminationError, PpgBpError
from .evaluation import SplitSpec, evaluate_checkpoint, loso_experiment, subject_split
from .io import (
    dump_json,
    load_json,
    read_windowset,
    scan_inputs,
    sha256_file,
    write_record,
    write_rgb,
    write_windowset,
)
from .models import Checkpoint, ModelSpec, TrainConfig, train
from .rppg import acceptance_curve, pos_extract, rppg_window_pipeline
from .segmentation import SWEEP_LENGTHS, GatingRules, SegmentPolicy, WindowSet, build_window_set
from .synth import CohortSpec, synth_cohort

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONTAMINATION = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _manifest(out: Path, command: str, cfg: dict, inputs=(), extra=None):
    hashes = {}
    for p in inputs:
        p = Path(p)
        hashes[p.name] = sha256_file(p)
    doc = {"tool": "ppgbp", "version": __version__, "command": command,
           "config_hash": config_hash(cfg), "config": cfg, "inputs": dict(sorted(hashes.items()))}
    if extra:
        doc.update(extra)
    dump_json(doc, out / "manifest.json")


def _staged(out: Path):
    """Temporary sibling directory, moved into place only on success."""
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))


def _commit(tmp: Path, out: Path):
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)


def _wrap(cfg_section, cls, what):
    try:
        return cls.from_dict(cfg_section) if hasattr(cls, "from_dict") else cls(**cfg_section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} config: {exc}") from exc


# ------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    cohort_cfg = dict(cfg.get("cohort", {}))
    if args.seed is not None:
        cohort_cfg["seed"] = args.seed
    spec = _wrap(cohort_cfg, CohortSpec, "cohort")
    emit_rgb = bool(cfg.get("emit_rgb", True))
    out = Path(args.out)
    tmp = _staged(out)
    try:
        (tmp / "ppg").mkdir()
        if emit_rgb:
            (tmp / "rppg").mkdir()
        for rec in synth_cohort(spec):
            write_record(tmp / "ppg", rec.subject_id, rec.ppg, rec.abp)
            if emit_rgb:
                write_rgb(tmp / "rppg", rec.rgb)
        _manifest(tmp, "synth", {"cohort": spec.to_dict(), "emit_rgb": emit_rgb},
                  extra={"subjects": [f"S{i:04d}" for i in range(spec.n_subjects)]})
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, out)
    return EXIT_OK


def _policy(args, cfg) -> SegmentPolicy:
    text = args.policy or cfg.get("policy", "const_beats:7")
    try:
        return SegmentPolicy.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _rules(cfg) -> GatingRules:
    return _wrap(cfg.get("rules", {}), GatingRules, "rules")


def cmd_preprocess(args) -> int:
    cfg = _load_config(args.config)
    policy = _policy(args, cfg)
    rules = _rules(cfg)
    derivatives = args.derivatives or bool(cfg.get("derivatives", False))
    sweep = args.sweep or bool(cfg.get("sweep", False))
    lengths = [int(v) for v in cfg.get("lengths", SWEEP_LENGTHS)]
    kind, items = scan_inputs(args.inp)
    inputs = sorted(Path(args.inp).glob("*.csv")) + sorted(Path(args.inp).glob("*.json"))
    run_cfg = {"policy": str(policy), "rules": rules.to_dict(), "derivatives": derivatives,
               "sweep": sweep, "lengths": lengths, "input_kind": kind}
    out = Path(args.out)
    tmp = _staged(out)
    try:
        if kind == "ppg":
            if sweep:
                rows = []
                for n in lengths:
                    pol = SegmentPolicy(policy.kind, n)
                    ws = build_window_set(items, pol, rules, derivatives)
                    sub = tmp / f"{pol.kind}_{n}"
                    sub.mkdir()
                    write_windowset(sub / "windows.csv", ws)
                    gen = ws.n_generated
                    rows.append([n, gen, len(ws), repr(len(ws) / gen if gen else 0.0)])
                _write_csv(tmp / "acceptance.csv", ["length", "n_windows", "n_accepted",
                                                    "fraction"], rows)
            else:
                ws = build_window_set(items, policy, rules, derivatives)
                write_windowset(tmp / "windows.csv", ws)
        else:
            windows, log, failures = [], Counter(), Counter()
            for trace in items:
                ws = rppg_window_pipeline(trace, rules)
                windows += ws.windows
                log.update(ws.rejection_log)
                failures.update(ws.record_failures)
            windows.sort(key=lambda w: (w.subject_id, w.source_offset))
            ws = WindowSet(windows, SegmentPolicy("const_beats", 7), log, rules, failures)
            write_windowset(tmp / "windows.csv", ws)
            if sweep:
                pulses = [pos_extract(t) for t in items]
                curve = acceptance_curve(pulses, lengths, rules.snr_min)
                _write_csv(tmp / "acceptance.csv", ["length", "fraction"],
                           [[n, repr(f)] for n, f in curve])
        _manifest(tmp, "preprocess", run_cfg, inputs)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, out)
    return EXIT_OK


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _windows_path(inp) -> Path:
    p = Path(inp)
    return p / "windows.csv" if p.is_dir() else p


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    windows_path = _windows_path(args.inp)
    ws = read_windowset(windows_path)
    if len(ws) == 0:
        raise PpgBpError("no windows to train on")
    model_cfg = dict(cfg.get("model", {"kind": "cnn1d"}))
    model_cfg.setdefault("input_channels", ws.channel_count)
    model_cfg.setdefault("input_len", ws.window_len)
    spec = _wrap(model_cfg, ModelSpec, "model")
    train_cfg = dict(cfg.get("train", {}))
    split_cfg = dict(cfg.get("split", {}))
    if args.seed is not None:
        train_cfg["seed"] = args.seed
        split_cfg["seed"] = args.seed
    tcfg = _wrap(train_cfg, TrainConfig, "train")
    split = _wrap(split_cfg, SplitSpec, "split")
    trn, val, tst = subject_split(ws, split)
    ckpt, history = train(spec, trn, val, tcfg)
    out = Path(args.out)
    tmp = _staged(out)
    try:
        ckpt.save(tmp / "checkpoint.json")
        _write_csv(tmp / "history.csv", ["epoch", "train_loss", "val_mae"],
                   [[h["epoch"], repr(h["train_loss"]), repr(h["val_mae"])] for h in history])
        for name, part in (("train", trn), ("val", val), ("test", tst)):
            write_windowset(tmp / f"{name}.csv", part)
        dump_json({"train": trn.subjects, "val": val.subjects, "test": tst.subjects},
                  tmp / "split.json")
        _manifest(tmp, "train", {"model": spec.to_dict(), "train": tcfg.to_dict(),
                                 "split": split.__dict__}, [windows_path])
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    base = Path(args.inp)
    ckpt_path = Path(cfg.get("checkpoint", base / "checkpoint.json"))
    train_path = Path(cfg.get("train", base / "train.csv"))
    test_path = Path(cfg.get("test", base / "test.csv"))
    for p in (ckpt_path, train_path, test_path):
        if not p.exists():
            raise ConfigError(f"missing input {p}")
    ckpt = Checkpoint.load(ckpt_path)
    trn, tst = read_windowset(train_path), read_windowset(test_path)
    rules = tst.rules or GatingRules()
    report = evaluate_checkpoint(ckpt, trn, tst, ckpt.spec.kind, rules)
    out = Path(args.out)
    tmp = _staged(out)
    try:
        (tmp / "report.json").write_text(report.to_json() + "\n")
        (tmp / "bins.csv").write_text(report.bins_csv())
        rows = []
        for rep in (report, report.baseline):
            rows.append([rep.model, repr(rep.sbp.mae), repr(rep.sbp.std), repr(rep.dbp.mae),
                         repr(rep.dbp.std), rep.n_windows])
        _write_csv(tmp / "summary.csv", ["model", "sbp_mae", "sbp_std", "dbp_mae", "dbp_std",
                                         "n_windows"], rows)
        _manifest(tmp, "eval", {"checkpoint": ckpt_path.name, "train": train_path.name,
                                "test": test_path.name}, [ckpt_path, train_path, test_path])
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, out)
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    if "checkpoint" not in cfg:
        raise ConfigError("finetune config needs a 'checkpoint' path")
    ckpt_path = Path(cfg["checkpoint"])
    if not ckpt_path.exists():
        raise ConfigError(f"missing checkpoint {ckpt_path}")
    train_cfg = dict(cfg.get("train", {}))
    if args.seed is not None:
        train_cfg["seed"] = args.seed
    tcfg = _wrap(train_cfg, TrainConfig, "train")
    frac = float(cfg.get("frac", 0.2))
    personalize = args.personalize or bool(cfg.get("personalize", False))
    windows_path = _windows_path(args.inp)
    ws = read_windowset(windows_path)
    ckpt = Checkpoint.load(ckpt_path)
    runs = [loso_experiment(ws, ckpt, tcfg, False, frac)]
    if personalize:
        runs.append(loso_experiment(ws, ckpt, tcfg, True, frac))
    out = Path(args.out)
    tmp = _staged(out)
    try:
        rows = [r.table_row() for r in runs]
        header = list(rows[0])
        _write_csv(tmp / "table1.csv", header,
                   [[r[h] if isinstance(r[h], str) else repr(r[h]) for h in header] for r in rows])
        for r in runs:
            tag = "personalized" if r.personalization else "baseline"
            doc = {"pooled": r.pooled.to_dict(), "folds": r.folds,
                   "per_subject": {k: v.to_dict() for k, v in r.per_subject.items()}}
            dump_json(doc, tmp / f"loso_{tag}.json")
        _manifest(tmp, "finetune", {"train": tcfg.to_dict(), "frac": frac,
                                    "personalize": personalize}, [ckpt_path, windows_path])
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, out)
    return EXIT_OK


def cmd_report(args) -> int:
    """Plot-ready CSVs: binned errors from reports, BP histograms from window sets."""
    cfg = _load_config(args.config)
    width = float(cfg.get("bin_width", 10.0))
    base = Path(args.inp)
    reports = sorted(base.rglob("report.json"))
    windowsets = sorted(p for p in base.rglob("*.csv")
                        if p.with_suffix(".json").exists() and _is_windowset(p))
    if not reports and not windowsets:
        raise ConfigError(f"nothing to report in {base}")
    out = Path(args.out)
    tmp = _staged(out)
    try:
        for i, rp in enumerate(reports):
            doc = load_json(rp)
            rows = []
            for rep in (doc, doc.get("baseline")):
                if not rep:
                    continue
                for t in ("sbp", "dbp"):
                    d = rep[t]
                    for k, c in enumerate(d["bin_counts"]):
                        m = d["bin_mae"][k]
                        rows.append([rep["model"], t, repr(d["bin_edges"][k]),
                                     repr(d["bin_edges"][k + 1]), c, "" if m is None else repr(m)])
            _write_csv(tmp / f"binned_error_{i}.csv",
                       ["model", "target", "bin_lo", "bin_hi", "count", "mae"], rows)
        for i, wp in enumerate(windowsets):
            ws = read_windowset(wp)
            labels = ws.labels()
            rows = []
            for j, t in enumerate(("sbp", "dbp")):
                if len(labels) == 0:
                    continue
                lo = np.floor(labels[:, j].min() / width) * width
                hi = np.ceil(labels[:, j].max() / width) * width + width
                counts, edges = np.histogram(labels[:, j], bins=np.arange(lo, hi + 1e-9, width))
                rows += [[wp.stem, t, repr(float(edges[k])), repr(float(edges[k + 1])), int(c)]
                         for k, c in enumerate(counts)]
            _write_csv(tmp / f"bp_distribution_{i}.csv",
                       ["set", "target", "bin_lo", "bin_hi", "count"], rows)
        _manifest(tmp, "report", cfg, reports + windowsets)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, out)
    return EXIT_OK


def _is_windowset(path: Path) -> bool:
    with open(path) as fh:
        return fh.readline().startswith("subject_id,window_id,")


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
            "finetune": cmd_finetune, "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppgbp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--in", dest="inp", help="input file or directory")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        if name == "preprocess":
            p.add_argument("--policy", help="const_time:N or const_beats:N")
            p.add_argument("--derivatives", action="store_true")
            p.add_argument("--sweep", action="store_true",
                           help="one window set per length plus acceptance.csv")
        if name == "finetune":
            p.add_argument("--personalize", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command != "synth" and not args.inp:
        print(f"ppgbp {args.command}: --in is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContaminationError as exc:
        print(f"contamination guard: {exc}", file=sys.stderr)
        return EXIT_CONTAMINATION
    except (PpgBpError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

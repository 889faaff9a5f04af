"""Training, fine-tuning, personalization and gradient checking."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ContaminationError, DivergenceError, InsufficientDataError, InvalidSpecError
from ..segmentation import WindowSet
from .adam import Adam
from .network import ModelSpec, Network, Parameters, final_layer_names, init, parameter_shapes


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(eq=False)
class Checkpoint:
    spec: ModelSpec
    params: Parameters
    metadata: dict = field(default_factory=dict)

    def predict(self, x) -> np.ndarray:
        return Network(self.spec).predict(self.params, x)

    def to_json(self) -> str:
        p = self.params
        doc = {
            "spec": self.spec.to_dict(),
            "tensors": {k: {"shape": list(v.shape), "data": [float(a) for a in v.ravel()]}
                        for k, v in p.tensors.items()},
            "trainable": dict(p.trainable),
            "target_mean": [float(a) for a in p.target_mean],
            "target_scale": [float(a) for a in p.target_scale],
            "metadata": self.metadata,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        spec = ModelSpec.from_dict(doc["spec"])
        tensors = {}
        for name, shape in parameter_shapes(spec).items():
            t = doc["tensors"][name]
            if tuple(t["shape"]) != tuple(shape):
                raise InvalidSpecError(f"tensor {name} has shape {t['shape']}, spec wants {shape}")
            tensors[name] = np.array(t["data"], dtype=float).reshape(shape)
        params = Parameters(tensors, {k: bool(doc["trainable"][k]) for k in tensors},
                            np.array(doc["target_mean"]), np.array(doc["target_scale"]))
        return cls(spec, params, doc.get("metadata", {}))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path) as fh:
            return cls.from_json(fh.read())


def check_disjoint(**partitions: WindowSet) -> None:
    """Raise :class:`ContaminationError` if a subject is in two partitions."""
    seen: dict[str, str] = {}
    for pname, ws in partitions.items():
        for sid in {w.subject_id for w in ws.windows}:
            if sid in seen and seen[sid] != pname:
                raise ContaminationError(
                    f"subject {sid} appears in both {seen[sid]} and {pname}")
            seen[sid] = pname


def val_mae(pred: np.ndarray, truth: np.ndarray) -> float:
    """Model-selection score: mean of the SBP and DBP mean absolute errors."""
    return float(np.mean(np.abs(pred - truth)))


class EarlyStopping:
    """Tracks the best score and signals a stop after ``patience`` misses."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.misses = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record ``score`` for ``epoch``; True if it is a new best."""
        if score < self.best:
            self.best, self.best_epoch, self.misses = score, epoch, 0
            return True
        self.misses += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.misses >= self.patience


def _fit(net: Network, params: Parameters, x_tr, y_tr_std, x_val, y_val, cfg: TrainConfig,
         names: list[str], start: int, patience: int | None):
    """Minibatch Adam on ``names``; returns (best params, history, best score)."""
    opt = Adam(names, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng([cfg.seed, 1])
    n = x_tr.shape[0]
    stopper = EarlyStopping(patience or cfg.epochs + 1)
    best = params.copy()
    history = []

    def val_score(p):
        z = net.forward_std(p, x_val, start=start) if start else net.forward_std(p, x_val)
        return val_mae(z * p.target_scale + p.target_mean, y_val)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b in range(0, n, cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            loss, grads = net.loss_and_grads(params, x_tr[idx], y_tr_std[idx], start=start)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            opt.step(params.tensors, grads)
            total += loss * len(idx)
        train_loss = total / n
        score = val_score(params)
        if not (np.isfinite(train_loss) and np.isfinite(score)):
            raise DivergenceError(epoch)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_mae": score})
        if stopper.update(epoch, score):
            best = params.copy()
        if patience is not None and stopper.should_stop:
            break
    return best, history, stopper


def train(spec: ModelSpec, trainset: WindowSet, valset: WindowSet, cfg: TrainConfig = TrainConfig(),
          params: Parameters | None = None, check: bool = True):
    """Train from scratch (or from ``params``) on subject-disjoint train/val sets.

    Returns ``(checkpoint, history)``; the checkpoint holds the parameters of
    the epoch with the lowest validation MAE. ``check=False`` skips the
    subject-overlap guard; only leakage demonstrations should need it.
    """
    if check:
        check_disjoint(train=trainset, val=valset)
    if len(trainset) == 0 or len(valset) == 0:
        raise InsufficientDataError("train and validation sets must be non-empty")
    net = Network(spec)
    x_tr, y_tr = trainset.inputs(), trainset.labels()
    x_val, y_val = valset.inputs(), valset.labels()
    meta = {"config_hash": cfg.hash(), "n_train": len(trainset), "n_val": len(valset),
            "train_subjects": trainset.subjects, "val_subjects": valset.subjects}

    if spec.kind == "mean":
        mean = y_tr.mean(axis=0)
        p = Parameters({"mean": mean})
        score = val_mae(net.predict(p, x_val), y_val)
        history = [{"epoch": e, "train_loss": float(np.mean((y_tr - mean) ** 2)), "val_mae": score}
                   for e in range(1, cfg.epochs + 1)]
        meta.update(epochs_run=cfg.epochs, best_epoch=1, best_val_mae=score)
        return Checkpoint(spec, p, meta), history

    params = params.copy() if params is not None else init(spec, seed=cfg.seed)
    params.target_mean = y_tr.mean(axis=0)
    params.target_scale = np.maximum(y_tr.std(axis=0), 1.0)
    names = [k for k in params.names() if params.trainable[k]]
    y_std = (y_tr - params.target_mean) / params.target_scale
    best, history, stopper = _fit(net, params, x_tr, y_std, x_val, y_val, cfg, names, 0, None)
    meta.update(epochs_run=len(history), best_epoch=stopper.best_epoch,
                best_val_mae=stopper.best)
    return Checkpoint(spec, best, meta), history


def finetune_final_layer(checkpoint: Checkpoint, trainset: WindowSet, valset: WindowSet,
                         cfg: TrainConfig = TrainConfig(), check: bool = True):
    """Adam on the final dense layer only, early-stopped on validation MAE.

    All other tensors are frozen and come back bit-identical. Frozen-trunk
    features are computed once and reused across epochs.
    """
    spec = checkpoint.spec
    if spec.kind == "mean":
        raise InvalidSpecError("a mean regressor has no final layer to fine-tune")
    if check:
        check_disjoint(train=trainset, val=valset)
    if len(trainset) == 0 or len(valset) == 0:
        raise InsufficientDataError("train and validation sets must be non-empty")
    net = Network(spec)
    params = checkpoint.params.copy()
    final = set(final_layer_names(spec))
    params.trainable = {k: k in final for k in params.names()}
    head = len(net.layers) - 1
    f_tr = net.features(params, trainset.inputs())
    f_val = net.features(params, valset.inputs())
    y_tr = trainset.labels()
    y_std = (y_tr - params.target_mean) / params.target_scale
    names = [k for k in params.names() if params.trainable[k]]
    best, history, stopper = _fit(net, params, f_tr, y_std, f_val, valset.labels(), cfg, names,
                                  head, cfg.patience)
    meta = dict(checkpoint.metadata)
    meta.update(finetune_config_hash=cfg.hash(), finetune_epochs_run=len(history),
                finetune_best_epoch=stopper.best_epoch, finetune_best_val_mae=stopper.best)
    return Checkpoint(spec, best, meta), history


def personal_split(subject_windows: WindowSet, frac: float = 0.2):
    """Chronologically first ``ceil(frac * N)`` windows and the rest."""
    if not 0 < frac < 1:
        raise ValueError("frac must lie strictly between 0 and 1")
    subjects = {w.subject_id for w in subject_windows}
    if len(subjects) != 1:
        raise ValueError("personalization takes windows of exactly one subject")
    n = len(subject_windows)
    if n < 2:
        raise InsufficientDataError("personalization needs at least two windows")
    ordered = sorted(subject_windows.windows, key=lambda w: w.source_offset)
    k = min(math.ceil(frac * n), n - 1)
    return subject_windows.subset(ordered[:k]), subject_windows.subset(ordered[k:])


def personalize(checkpoint: Checkpoint, subject_windows: WindowSet, frac: float = 0.2,
                cfg: TrainConfig = TrainConfig(), trainset: WindowSet | None = None,
                valset: WindowSet | None = None):
    """Fine-tune the final layer with the first ``frac`` of one subject's windows.

    The tuning windows are added to ``trainset`` (if given). Validation uses
    ``valset`` when given, otherwise the tuning windows themselves. Returns
    ``(checkpoint, heldout)`` where ``heldout`` is the untouched remainder.
    """
    tune, heldout = personal_split(subject_windows, frac)
    train_ws = tune if trainset is None else tune.subset(trainset.windows + tune.windows)
    if valset is None:
        check_disjoint(train=train_ws.subset(trainset.windows if trainset else []), heldout=heldout)
        ckpt, _ = finetune_final_layer(checkpoint, train_ws, tune, cfg, check=False)
    else:
        check_disjoint(train=train_ws, val=valset)
        ckpt, _ = finetune_final_layer(checkpoint, train_ws, valset, cfg, check=False)
    ckpt.metadata.update(personalized_subject=tune.subjects[0], n_personal=len(tune),
                         n_heldout=len(heldout))
    return ckpt, heldout


def gradient_check(spec: ModelSpec, params: Parameters, window, label, seed: int = 0,
                   per_tensor: int = 200) -> float:
    """Max relative error between backprop and central finite differences.

    Up to ``per_tensor`` entries of each tensor are checked (all of them for
    smaller tensors). The error of a tensor is ``|a - n| / (|a| + |n|)`` over
    the checked entries (Euclidean norms); the worst tensor is returned. The
    step is 1e-4 relative to the entry's magnitude, floored at 1e-6. Entries whose perturbation flips any ReLU unit are
    replaced by other entries so that no kink lies between the two probes.
    """
    if spec.kind == "mean":
        return 0.0
    if not all(params.trainable.values()):
        raise ValueError("gradient_check expects all parameters trainable")
    net = Network(spec)
    x = np.asarray(window, dtype=float).reshape(1, spec.input_channels, spec.input_len)
    y = (np.asarray(label, dtype=float).reshape(1, 2) - params.target_mean) / params.target_scale
    p = params.copy()
    _, grads = net.loss_and_grads(p, x, y)
    base_masks = net.relu_masks(p, x)
    rng = np.random.default_rng(seed)

    def loss_at():
        out = net.forward_std(p, x)
        return float(np.mean((out - y) ** 2))

    def crosses_kink():
        return any(not np.array_equal(a, b) for a, b in zip(base_masks, net.relu_masks(p, x)))

    worst = 0.0
    for name, tensor in p.tensors.items():
        flat = tensor.reshape(-1)
        gflat = grads[name].reshape(-1)
        candidates = rng.permutation(flat.size)
        ana, num = [], []
        for i in candidates:
            if len(ana) >= per_tensor:
                break
            orig = flat[i]
            h = max(1e-4 * abs(orig), 1e-6)
            flat[i] = orig + h
            lp = loss_at()
            kink = crosses_kink() if base_masks else False
            flat[i] = orig - h
            lm = loss_at()
            kink = kink or (crosses_kink() if base_masks else False)
            flat[i] = orig
            if kink:
                continue
            num.append((lp - lm) / (2 * h))
            ana.append(gflat[i])
        ana, num = np.array(ana), np.array(num)
        denom = np.linalg.norm(ana) + np.linalg.norm(num)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst

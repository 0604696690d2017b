"""Training loop for the V and theta models: Adam, step decay, Delta-L stopping."""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cnn import CnnModel, Target, forward_backward
from .dataset import Dataset
from .errors import NonFiniteLoss, ShapeMismatch

log = logging.getLogger(__name__)

_SHUFFLE_STREAM = 7


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    batch: int = 32
    max_epochs: int = 500
    decay_patience: int = 5
    decay_factor: float = 10.0
    lr_floor: float = 1e-9
    stop_delta_l: float = 0.01  # percent
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for f in fields(self):
            if f.name != "seed" and not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls(**json.loads(Path(path).read_text()))


class StopReason(enum.Enum):
    MAX_EPOCHS = "max_epochs"
    DELTA_L = "delta_l"


@dataclass
class TrainReport:
    target: str
    epoch_train_loss: list[float] = field(default_factory=list)
    epoch_val_loss: list[float] = field(default_factory=list)
    epoch_val_delta_l: list[float] = field(default_factory=list)
    lr_schedule: list[float] = field(default_factory=list)
    final_delta_l: float = float("nan")  # percent, on the test set
    final_val_delta_l: float = float("nan")
    wall_time: float = 0.0
    epochs_run: int = 0
    stop_reason: str = StopReason.MAX_EPOCHS.value

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "TrainReport":
        return cls(**json.loads(Path(path).read_text()))


def loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Sum over samples of the squared L2 prediction error."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.sum(d * d))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def _norm(a):
    return float(np.sqrt(np.sum(a * a)))


def delta_l(pred_v, pred_th, dc_v, dc_th, ac_v, ac_th) -> float:
    """Percent ratio of the prediction error norm to the DC-vs-AC error norm.

    Each norm is the Frobenius norm over all buses and samples, averaged over
    the magnitude and angle parts. Pass ``None`` for both V (or both theta)
    arrays to score a single model.
    """
    def part(pred, dc, ac):
        if pred is None:
            return 0.0, 0.0
        return 0.5 * _norm(pred - ac), 0.5 * _norm(dc - ac)

    fv, iv = part(pred_v, dc_v, ac_v)
    ft, it = part(pred_th, dc_th, ac_th)
    li = iv + it
    if li == 0:
        raise ZeroDivisionError("DC solution already equals the AC solution")
    return 100.0 * (fv + ft) / li


def _single_delta_l(target: Target, pred, dc, ac):
    if target is Target.V:
        return delta_l(pred, None, dc, None, ac, None)
    return delta_l(None, pred, None, dc, None, ac)


def _target_arrays(dataset: Dataset, target: Target):
    dc_v, dc_th = dataset.dc_targets()
    if target is Target.V:
        return dataset.y_v, dc_v
    return dataset.y_th, dc_th


def predict(model: CnnModel, x_hbc: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Batched inference over internal-layout inputs (H x N x 4) -> L x N."""
    outs = []
    for s in range(0, x_hbc.shape[1], chunk):
        out, _ = model._forward_hbc(np.ascontiguousarray(x_hbc[:, s:s + chunk]))
        outs.append(out)
    return np.concatenate(outs, axis=1) if outs else np.zeros((model.l, 0))


def train(model: CnnModel, dataset: Dataset, cfg: TrainConfig) -> tuple[CnnModel, TrainReport]:
    """Train ``model`` in place on the dataset's training split.

    Per epoch: shuffle with an epoch-keyed PRNG, sweep mini-batches (the last
    may be short) with one Adam step each, then record the training loss of
    the post-epoch weights and the validation loss and Delta-L. The learning
    rate drops by ``decay_factor`` whenever the training loss has not beaten
    its running minimum for ``decay_patience`` epochs.
    """
    target = model.target
    split = dataset.split
    tr, va, te = split["train"], split["val"], split["test"]
    if len(tr) == 0:
        raise ValueError("empty training split")
    if cfg.batch > len(tr):
        raise ValueError("batch size exceeds the training set")
    y_all, dc_all = _target_arrays(dataset, target)
    x_hbc = np.ascontiguousarray(dataset.x.transpose(0, 2, 1))
    x_tr, y_tr = np.ascontiguousarray(x_hbc[:, tr]), np.ascontiguousarray(y_all[:, tr])
    x_va, y_va, dc_va = x_hbc[:, va], y_all[:, va], dc_all[:, va]

    params = model.params()
    state = AdamState.zeros_like(params)
    report = TrainReport(target=target.value)
    lr = cfg.lr0
    best = np.inf
    stall = 0
    t0 = time.perf_counter()

    def grad_fn(yb):
        def fn(pred):
            d = pred - yb
            return float(np.sum(d * d)), 2.0 * d
        return fn

    for epoch in range(cfg.max_epochs):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(cfg.seed, spawn_key=(_SHUFFLE_STREAM, epoch))))
        order = rng.permutation(len(tr))
        for bi, s in enumerate(range(0, len(order), cfg.batch)):
            idx = order[s:s + cfg.batch]
            batch_loss, grads = forward_backward(model, x_tr[:, idx], grad_fn(y_tr[:, idx]))
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(epoch, bi)
            adam_step(params, grads, state, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

        train_loss = loss(predict(model, x_tr), y_tr)
        if not np.isfinite(train_loss):
            raise NonFiniteLoss(epoch, -1)
        report.epoch_train_loss.append(train_loss)
        report.lr_schedule.append(lr)
        if len(va):
            pred_va = predict(model, x_va)
            report.epoch_val_loss.append(loss(pred_va, y_va) / len(va))
            report.epoch_val_delta_l.append(_single_delta_l(target, pred_va, dc_va, y_va))
        else:
            report.epoch_val_loss.append(float("nan"))
            report.epoch_val_delta_l.append(float("nan"))
        report.epochs_run = epoch + 1
        log.debug("%s epoch %d lr %.1e train %.6g val dL %.5f%%", target.value, epoch,
                  lr, train_loss, report.epoch_val_delta_l[-1])

        if report.epoch_val_delta_l[-1] < cfg.stop_delta_l:
            report.stop_reason = StopReason.DELTA_L.value
            break
        if train_loss < best:
            best = train_loss
            stall = 0
        else:
            stall += 1
            if stall >= cfg.decay_patience:
                lr = max(lr / cfg.decay_factor, cfg.lr_floor)
                stall = 0

    report.wall_time = time.perf_counter() - t0
    report.final_val_delta_l = report.epoch_val_delta_l[-1]
    if len(te):
        report.final_delta_l = _single_delta_l(target, predict(model, x_hbc[:, te]),
                                               dc_all[:, te], y_all[:, te])
    return model, report

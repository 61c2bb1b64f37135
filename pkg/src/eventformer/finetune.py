"""Next-event prediction on frozen encoder representations.

Each representation row ``H[i]`` (computed on the raw stream: no voids, no
masks, dropout off) is paired with the next event ``(t[i+1], y[i+1])``. A
shared MLP emits M label logits and one time value; the loss per pair is
``CE + alpha * (t_hat - t)^2`` and batch/dev losses are means over pairs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .encoder import EncoderModel, represent
from .seeding import stream
from .streams import EventSequence
from .tensor import Adam, Tensor

log = logging.getLogger(__name__)

TIE_TOL = 1e-6


@dataclass(frozen=True)
class FinetuneConfig:
    alpha: float = 0.01
    lrs: tuple[float, ...] = (0.001, 0.002)
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    hidden: tuple[int, ...] = (512, 512, 512)
    time_target: str = "absolute"
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.time_target not in ("absolute", "gap"):
            raise ValueError(f"time_target must be 'absolute' or 'gap', got {self.time_target!r}")
        if not self.lrs:
            raise ValueError("need at least one learning rate")


@dataclass
class Pairs:
    """Representation rows with their next-event targets."""

    x: np.ndarray
    t_next: np.ndarray
    y_next: np.ndarray
    t_last: np.ndarray

    def __len__(self) -> int:
        return int(self.y_next.size)

    def target_time(self, mode: str) -> np.ndarray:
        return self.t_next - self.t_last if mode == "gap" else self.t_next


def extract_representations(model: EncoderModel, seq: EventSequence) -> np.ndarray:
    """Frozen-encoder rows for a raw stream (one per event)."""
    return represent(model, seq)


def make_pairs(model: EncoderModel, dataset: Sequence[EventSequence]) -> Pairs:
    xs, tn_, yn, tl = [], [], [], []
    for seq in dataset:
        if len(seq) < 2:
            continue
        h = extract_representations(model, seq)
        xs.append(h[:-1])
        tn_.append(seq.times[1:])
        yn.append(seq.labels[1:])
        tl.append(seq.times[:-1])
    d = model.config.d_model
    if not xs:
        return Pairs(np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0))
    return Pairs(np.concatenate(xs), np.concatenate(tn_), np.concatenate(yn), np.concatenate(tl))


class FinetuneHead:
    """MLP ``d_model -> hidden... -> M + 1``; the last output is the time value."""

    def __init__(self, d_model: int, label_count: int, hidden: Sequence[int] = (512, 512, 512),
                 rng: np.random.Generator | None = None, params: dict | None = None):
        self.d_model = d_model
        self.label_count = label_count
        self.hidden = tuple(hidden)
        if params is not None:
            self.params = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in sorted(params.items())}
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [d_model, *self.hidden, label_count + 1]
        self.params = {}
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            bound = 1.0 / math.sqrt(a)
            self.params[f"mlp{i}.w"] = Tensor(rng.uniform(-bound, bound, (a, b)), requires_grad=True)
            self.params[f"mlp{i}.b"] = Tensor(rng.uniform(-bound, bound, b), requires_grad=True)

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        for i in range(self.n_layers):
            h = tn.add(tn.matmul(h, self.params[f"mlp{i}.w"]), self.params[f"mlp{i}.b"])
            if i < self.n_layers - 1:
                h = tn.relu(h)
        return h

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


def finetune_loss(out: Tensor, t_target, y_target, label_count: int, alpha: float) -> Tensor:
    """Mean over pairs of CE(softmax of the label logits) + alpha * squared time error."""
    n = out.shape[0]
    logits = tn.slice_cols(out, 0, label_count)
    t_hat = tn.reshape(tn.slice_cols(out, label_count, label_count + 1), (n,))
    ce = tn.scale(tn.sum(tn.pick(tn.log_softmax(logits), y_target)), -1.0 / n)
    if not alpha:
        return ce
    se = tn.mean(tn.square(tn.sub(t_hat, Tensor(np.asarray(t_target, dtype=np.float64)))))
    return tn.add(ce, tn.scale(se, alpha))


def dev_loss(head: FinetuneHead, pairs: Pairs, cfg: FinetuneConfig) -> float:
    out = head.forward(pairs.x)
    return finetune_loss(out, pairs.target_time(cfg.time_target), pairs.y_next, head.label_count, cfg.alpha).item()


@dataclass
class FinetuneRecord:
    lr: float
    epoch: int
    train_loss: float
    dev_loss: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FinetuneResult:
    head: FinetuneHead
    lr: float
    best_dev: float
    log: list[FinetuneRecord] = field(default_factory=list)


def _train_one(train: Pairs, dev: Pairs, d_model: int, label_count: int, cfg: FinetuneConfig, lr: float):
    head = FinetuneHead(d_model, label_count, cfg.hidden, rng=stream(cfg.seed, "init-finetune"))
    opt = Adam(head.params, lr=lr)
    order_rng = stream(cfg.seed, "batching-finetune")
    t_train = train.target_time(cfg.time_target)
    best, best_state, since, records = math.inf, head.state_dict(), 0, []
    for epoch in range(1, cfg.max_epochs + 1):
        order = order_rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            loss = finetune_loss(head.forward(train.x[idx]), t_train[idx], train.y_next[idx], label_count, cfg.alpha)
            tn.backward(loss)
            opt.step()
            total += loss.item() * idx.size
        dl = dev_loss(head, dev, cfg)
        records.append(FinetuneRecord(lr, epoch, total / len(train), dl))
        log.info("lr=%g epoch %d train=%.6f dev=%.6f", lr, epoch, total / len(train), dl)
        if dl < best - TIE_TOL:
            best, best_state, since = dl, head.state_dict(), 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    for k, v in best_state.items():
        head.params[k].data[...] = v
    return head, best, records


def finetune(train: Pairs, dev: Pairs, d_model: int, label_count: int, cfg: FinetuneConfig) -> FinetuneResult:
    """Train a head per candidate learning rate and keep the best on dev."""
    if len(train) == 0:
        raise ValueError("no training pairs (every sequence needs at least two events)")
    if len(dev) == 0:
        raise ValueError("no dev pairs")
    best = None
    all_records: list[FinetuneRecord] = []
    for lr in cfg.lrs:
        head, score, records = _train_one(train, dev, d_model, label_count, cfg, lr)
        all_records.extend(records)
        if best is None or score < best[2] - TIE_TOL:
            best = (head, lr, score)
    head, lr, score = best
    return FinetuneResult(head, lr, score, all_records)


def predict_pairs(head: FinetuneHead, pairs: Pairs, time_target: str = "absolute") -> tuple[np.ndarray, np.ndarray]:
    """Absolute next-time predictions (clamped to >= the last seen time) and labels."""
    out = head.forward(pairs.x).data
    m = head.label_count
    y_hat = out[:, :m].argmax(axis=1)
    t_raw = out[:, m]
    t_hat = pairs.t_last + t_raw if time_target == "gap" else t_raw
    return np.maximum(t_hat, pairs.t_last), y_hat


def predict_next(model: EncoderModel, head: FinetuneHead, prefix: EventSequence,
                 time_target: str = "absolute") -> tuple[float, int]:
    if len(prefix) == 0:
        raise ValueError("predict_next needs a nonempty prefix")
    h = extract_representations(model, prefix)[-1:]
    pairs = Pairs(h, np.zeros(1), np.zeros(1, dtype=np.int64), prefix.times[-1:])
    t_hat, y_hat = predict_pairs(head, pairs, time_target)
    return float(t_hat[0]), int(y_hat[0])


def evaluate(t_pred, y_pred, t_true, y_true, t_last=None, target_mode: str = "absolute") -> dict:
    """Summary record ``{time_rmse, type_accuracy, n_pairs, target_mode}``.

    In ``gap`` mode times are measured from ``t_last`` (the last observed
    event) before the RMSE is taken.
    """
    t_pred, t_true = np.asarray(t_pred, dtype=np.float64), np.asarray(t_true, dtype=np.float64)
    y_pred, y_true = np.asarray(y_pred), np.asarray(y_true)
    if t_pred.size == 0 or t_pred.shape != t_true.shape or y_pred.shape != y_true.shape or y_pred.size != t_pred.size:
        raise ValueError("evaluate needs nonempty, aligned prediction/truth arrays")
    if target_mode not in ("absolute", "gap"):
        raise ValueError(f"unknown target mode {target_mode!r}")
    if target_mode == "gap":
        if t_last is None:
            raise ValueError("gap mode needs the last observed times")
        t_last = np.asarray(t_last, dtype=np.float64)
        t_pred, t_true = t_pred - t_last, t_true - t_last
    return {
        "time_rmse": float(np.sqrt(np.mean((t_pred - t_true) ** 2))),
        "type_accuracy": float(np.mean(y_pred == y_true)),
        "n_pairs": int(t_pred.size),
        "target_mode": target_mode,
    }


def majority_baseline(train_labels, test_labels) -> float:
    """Accuracy of always predicting the most frequent training label."""
    vals, counts = np.unique(np.asarray(train_labels), return_counts=True)
    return float(np.mean(np.asarray(test_labels) == vals[counts.argmax()]))


def encoder_checksum(model: EncoderModel) -> str:
    import hashlib

    h = hashlib.sha256()
    for k in sorted(model.params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(model.params[k].data).tobytes())
    return h.hexdigest()

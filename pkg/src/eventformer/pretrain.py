"""Masked event model pre-training.

Per augmented sequence the objective is ``L_pred + lambda * L_contr``:

* ``L_pred`` scores every masked epoch (real or void): cross-entropy over
  the M real labels plus NULL, and ``gamma`` times the squared error of the
  predicted absolute timestamp.
* ``L_contr`` compares four group means of the encoder output (masked/
  unmasked x real/void) by cosine similarity.

A batch loss is the mean of the per-sequence losses.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .encoder import EncoderModel, embed, encode
from .seeding import stream
from .streams import AugmentedSequence, MaskPolicy
from .tensor import Adam, Tensor

log = logging.getLogger(__name__)

TIE_TOL = 1e-6


@dataclass(frozen=True)
class PretrainConfig:
    gamma: float = 1.0
    lam: float = 0.01
    omega: float = 1.0
    mask: MaskPolicy = MaskPolicy()
    batch_size: int = 16
    lr: float = 1e-4
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lambda must be >= 0")
        if not self.omega > 0:
            raise ValueError("omega must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")


class PretrainHeads:
    """Linear label head (M real labels + NULL) and linear time head."""

    def __init__(self, d_model: int, label_count: int, rng: np.random.Generator | None = None, params: dict | None = None):
        self.d_model = d_model
        self.label_count = label_count
        if params is not None:
            self.params = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in sorted(params.items())}
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(d_model)
        self.params = {
            "head.label.w": Tensor(rng.uniform(-bound, bound, (d_model, label_count + 1)), requires_grad=True),
            "head.label.b": Tensor(np.zeros(label_count + 1), requires_grad=True),
            "head.time.w": Tensor(rng.uniform(-bound, bound, d_model), requires_grad=True),
            "head.time.b": Tensor(np.zeros(()), requires_grad=True),
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


@dataclass
class LossParts:
    event: Tensor
    pred: float
    contr: float
    pred_skipped: bool
    contr_skipped: bool


def prediction_loss(h_masked: Tensor, true_times, true_labels, heads: PretrainHeads, gamma: float) -> Tensor:
    """Mean over masked epochs of CE(label) + gamma * squared time error."""
    p = heads.params
    n = h_masked.shape[0]
    if n == 0:
        raise ValueError("prediction_loss needs at least one masked epoch")
    logits = tn.add(tn.matmul(h_masked, p["head.label.w"]), p["head.label.b"])
    ce = tn.scale(tn.sum(tn.pick(tn.log_softmax(logits), true_labels)), -1.0 / n)
    t_hat = tn.add(tn.matmul(h_masked, p["head.time.w"]), p["head.time.b"])
    err = tn.sub(t_hat, Tensor(np.asarray(true_times, dtype=np.float64)))
    mse = tn.mean(tn.square(err))
    return tn.add(ce, tn.scale(mse, gamma)) if gamma else ce


GROUPS = ("masked_real", "masked_void", "unmasked_real", "unmasked_void")


def group_indices(is_void, is_masked) -> dict[str, np.ndarray]:
    is_void = np.asarray(is_void, bool)
    is_masked = np.asarray(is_masked, bool)
    return {
        "masked_real": np.flatnonzero(is_masked & ~is_void),
        "masked_void": np.flatnonzero(is_masked & is_void),
        "unmasked_real": np.flatnonzero(~is_masked & ~is_void),
        "unmasked_void": np.flatnonzero(~is_masked & is_void),
    }


def contrastive_loss(h: Tensor, is_void, is_masked, omega: float = 1.0) -> Tensor | None:
    """Group-mean contrastive loss; ``None`` when any of the four groups is empty.

    ``-log(exp(pos / omega) / exp(neg / omega))`` reduces exactly to
    ``(neg - pos) / omega`` with pos = sim(mr, ur) + sim(mv, uv) and
    neg = sim(mr, mv) + sim(ur, uv).
    """
    idx = group_indices(is_void, is_masked)
    if any(v.size == 0 for v in idx.values()):
        return None
    g = {k: tn.mean(tn.gather_rows(h, v), axis=0) for k, v in idx.items()}
    sim = tn.cosine_similarity
    pos = tn.add(sim(g["masked_real"], g["unmasked_real"]), sim(g["masked_void"], g["unmasked_void"]))
    neg = tn.add(sim(g["masked_real"], g["masked_void"]), sim(g["unmasked_real"], g["unmasked_void"]))
    return tn.scale(tn.sub(neg, pos), 1.0 / omega)


def sequence_loss(seq: AugmentedSequence, model: EncoderModel, heads: PretrainHeads, cfg: PretrainConfig,
                  train: bool = False, rng: np.random.Generator | None = None) -> LossParts:
    h = encode(embed(seq, model), model, train=train, rng=rng)
    masked = np.flatnonzero(seq.is_masked)
    zero = Tensor(np.zeros(()))
    if masked.size:
        lp = prediction_loss(tn.gather_rows(h, masked), seq.true_time[masked], seq.true_label[masked], heads, cfg.gamma)
    else:
        lp = zero
    lc = contrastive_loss(h, seq.is_void, seq.is_masked, cfg.omega)
    contr_skipped = lc is None
    if lc is None:
        lc = zero
    else:
        assert abs(lc.item()) <= 4.0 / cfg.omega + 1e-12, "contrastive loss outside its cosine bound"
    total = tn.add(lp, tn.scale(lc, cfg.lam)) if cfg.lam else lp
    return LossParts(total, lp.item(), lc.item(), masked.size == 0, contr_skipped)


@dataclass
class EpochRecord:
    epoch: int
    train_pred: float
    train_contr: float
    train_event: float
    dev_event: float
    dev_pred: float
    dev_contr: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PretrainResult:
    model: EncoderModel
    heads: PretrainHeads
    log: list[EpochRecord]
    best_epoch: int
    best_dev: float
    stopped_early: bool
    skipped: dict[str, int] = field(default_factory=dict)


def evaluate(dataset, model: EncoderModel, heads: PretrainHeads, cfg: PretrainConfig) -> tuple[float, float, float]:
    """Mean (event, pred, contr) losses in inference mode."""
    parts = [sequence_loss(s, model, heads, cfg) for s in dataset]
    return (
        float(np.mean([p.event.item() for p in parts])),
        float(np.mean([p.pred for p in parts])),
        float(np.mean([p.contr for p in parts])),
    )


class DivergenceError(RuntimeError):
    pass


def pretrain(train: list[AugmentedSequence], dev: list[AugmentedSequence], model: EncoderModel,
             cfg: PretrainConfig, heads: PretrainHeads | None = None) -> PretrainResult:
    """Adam on encoder + heads with early stopping on the dev objective.

    The returned model and heads hold the parameters of the best dev epoch.
    """
    if not train or not dev:
        raise ValueError("pretraining needs nonempty train and dev splits")
    m = model.config.label_count
    if any(s.label_count != m for s in [*train, *dev]):
        raise ValueError(f"dataset label count differs from the encoder's ({m})")
    if heads is None:
        heads = PretrainHeads(model.config.d_model, m, rng=stream(cfg.seed, "init-heads"))
    params = {**model.params, **heads.params}
    opt = Adam(params, lr=cfg.lr)
    batch_rng = stream(cfg.seed, "batching")
    drop_rng = stream(cfg.seed, "dropout")
    records: list[EpochRecord] = []
    best = math.inf
    best_state = {k: v.data.copy() for k, v in params.items()}
    best_epoch = 0
    since_best = 0
    stopped = False
    skipped = {"pred": 0, "contr": 0}
    for epoch in range(1, cfg.max_epochs + 1):
        order = batch_rng.permutation(len(train))
        sums = np.zeros(3)
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start : start + cfg.batch_size]]
            opt.zero_grad()
            parts = [sequence_loss(s, model, heads, cfg, train=True, rng=drop_rng) for s in batch]
            loss = tn.mean(tn.stack([p.event for p in parts]))
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"non-finite loss in epoch {epoch}")
            tn.backward(loss)
            opt.step()
            for p in parts:
                sums += (p.event.item(), p.pred, p.contr)
                skipped["pred"] += p.pred_skipped
                skipped["contr"] += p.contr_skipped
        sums /= len(train)
        dev_event, dev_pred, dev_contr = evaluate(dev, model, heads, cfg)
        if not math.isfinite(dev_event):
            raise DivergenceError(f"non-finite dev loss in epoch {epoch}")
        rec = EpochRecord(epoch, float(sums[1]), float(sums[2]), float(sums[0]), dev_event, dev_pred, dev_contr)
        records.append(rec)
        log.info("epoch %d train_event=%.6f dev_event=%.6f", epoch, rec.train_event, dev_event)
        if dev_event < best - TIE_TOL:
            best = dev_event
            best_epoch = epoch
            best_state = {k: v.data.copy() for k, v in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                stopped = True
                break
    for k, v in best_state.items():
        params[k].data[...] = v
    return PretrainResult(model, heads, records, best_epoch, best, stopped, skipped)


def clone_model(model: EncoderModel) -> EncoderModel:
    return EncoderModel(model.config, params=copy.deepcopy(model.state_dict()))

"""Transformer encoder over (augmented) event streams.

Input row i is ``label_embedding[y_i] + PE[i] + TE[t_i]``, where PE is the
usual sinusoidal position code and TE is the same sinusoid evaluated at
the (real-valued) observed time. Attention is causal: epoch i sees epochs
0..i. Blocks are post-norm.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .streams import AugmentedSequence, EventSequence, augment_plain
from .tensor import Tensor

BASE = 10000.0


@dataclass(frozen=True)
class EncoderConfig:
    label_count: int
    d_model: int = 512
    n_blocks: int = 4
    n_heads: int = 4
    d_ff: int = 1024
    dropout: float = 0.1
    max_len: int = 4096

    def __post_init__(self):
        for name in ("label_count", "d_model", "n_blocks", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def desk(cls, label_count: int, **kw) -> "EncoderConfig":
        """Small profile for tests and CPU smoke runs."""
        return cls(label_count=label_count, **{"d_model": 32, "n_blocks": 2, "n_heads": 2, "d_ff": 64, **kw})

    def to_dict(self) -> dict:
        return asdict(self)


def _sinusoid(x: np.ndarray, d_model: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    k = np.arange(0, d_model, 2)
    freq = BASE ** (-k / d_model)
    ang = x[:, None] * freq[None, :]
    out = np.empty((x.size, d_model))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang[:, : d_model // 2])
    return out


def positional_encoding(n: int, d_model: int, max_len: int | None = None) -> np.ndarray:
    if max_len is not None and n > max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {max_len}")
    return _sinusoid(np.arange(n), d_model)


def temporal_encoding(times, d_model: int) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    if np.any(times < 0):
        raise ValueError("temporal encoding needs nonnegative times")
    return _sinusoid(times, d_model)


def _linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)


class EncoderModel:
    """Parameters live in ``self.params`` (name -> leaf :class:`Tensor`)."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator | None = None, params: dict | None = None):
        self.config = config
        if params is not None:
            shapes = self._shapes()
            if set(params) != set(shapes) or any(np.shape(params[k]) != s for k, s in shapes.items()):
                raise ValueError("parameter set does not match the encoder config")
            self.params = {k: Tensor(np.array(params[k], dtype=np.float64), requires_grad=True) for k in sorted(params)}
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {k: Tensor(v, requires_grad=True) for k, v in self._init(rng).items()}

    def _init(self, rng) -> dict[str, np.ndarray]:
        c = self.config
        d = c.d_model
        p = {"embedding": rng.normal(0.0, 1.0 / math.sqrt(d), (c.label_count + 2, d))}
        for b in range(c.n_blocks):
            for name in ("q", "k", "v", "o"):
                p[f"block{b}.{name}.w"], p[f"block{b}.{name}.b"] = _linear(rng, d, d)
            p[f"block{b}.ff1.w"], p[f"block{b}.ff1.b"] = _linear(rng, d, c.d_ff)
            p[f"block{b}.ff2.w"], p[f"block{b}.ff2.b"] = _linear(rng, c.d_ff, d)
            for ln in ("ln1", "ln2"):
                p[f"block{b}.{ln}.g"] = np.ones(d)
                p[f"block{b}.{ln}.b"] = np.zeros(d)
        return p

    def _shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._init(np.random.default_rng(0)).items()}

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data[...] = v


def embed(seq: AugmentedSequence | EventSequence, model: EncoderModel) -> Tensor:
    """Label embedding + PE + TE for every observed epoch."""
    if isinstance(seq, EventSequence):
        seq = augment_plain(seq)
    c = model.config
    n = len(seq)
    enc = positional_encoding(n, c.d_model, c.max_len) + temporal_encoding(seq.observed_time, c.d_model)
    rows = tn.gather_rows(model.params["embedding"], seq.observed_label)
    return tn.add(rows, Tensor(enc))


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def _attention(x: Tensor, model: EncoderModel, b: int, train: bool, rng, record: list | None) -> Tensor:
    c = model.config
    p = model.params
    n = x.shape[0]
    dk = c.d_model // c.n_heads
    q = tn.add(tn.matmul(x, p[f"block{b}.q.w"]), p[f"block{b}.q.b"])
    k = tn.add(tn.matmul(x, p[f"block{b}.k.w"]), p[f"block{b}.k.b"])
    v = tn.add(tn.matmul(x, p[f"block{b}.v.w"]), p[f"block{b}.v.b"])
    mask = causal_mask(n)
    heads = []
    for h in range(c.n_heads):
        lo, hi = h * dk, (h + 1) * dk
        qh, kh, vh = tn.slice_cols(q, lo, hi), tn.slice_cols(k, lo, hi), tn.slice_cols(v, lo, hi)
        scores = tn.scale(tn.matmul(qh, tn.transpose(kh)), 1.0 / math.sqrt(dk))
        attn = tn.softmax(scores, mask=mask)
        if record is not None:
            record.append(attn.data.copy())
        attn = tn.dropout(attn, c.dropout, rng, train)
        heads.append(tn.matmul(attn, vh))
    merged = heads[0] if len(heads) == 1 else tn.concat(heads, axis=1)
    return tn.add(tn.matmul(merged, p[f"block{b}.o.w"]), p[f"block{b}.o.b"])


def encode(x: Tensor, model: EncoderModel, train: bool = False, rng: np.random.Generator | None = None,
           attention: list | None = None) -> Tensor:
    """Run the attention blocks; returns H with one row per epoch.

    If ``attention`` is a list, each head's attention matrix is appended.
    """
    c = model.config
    p = model.params
    if x.data.ndim != 2 or x.shape[1] != c.d_model:
        raise tn.ShapeError(f"encoder input must be n x {c.d_model}, got {x.shape}")
    if train and c.dropout > 0 and rng is None:
        raise ValueError("training with dropout needs an rng")
    h = x
    for b in range(c.n_blocks):
        a = tn.dropout(_attention(h, model, b, train, rng, attention), c.dropout, rng, train)
        h = tn.layer_norm(tn.add(h, a), p[f"block{b}.ln1.g"], p[f"block{b}.ln1.b"])
        f = tn.relu(tn.add(tn.matmul(h, p[f"block{b}.ff1.w"]), p[f"block{b}.ff1.b"]))
        f = tn.add(tn.matmul(f, p[f"block{b}.ff2.w"]), p[f"block{b}.ff2.b"])
        f = tn.dropout(f, c.dropout, rng, train)
        h = tn.layer_norm(tn.add(h, f), p[f"block{b}.ln2.g"], p[f"block{b}.ln2.b"])
    return h


def represent(model: EncoderModel, seq: AugmentedSequence | EventSequence) -> np.ndarray:
    """Inference-mode H as a plain array."""
    return encode(embed(seq, model), model, train=False).data.copy()

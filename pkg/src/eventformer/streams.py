"""Event streams: data model, JSON-Lines I/O, void injection, masking and splits.

Labels are plain integers. Real labels are ``0..M-1``; two reserved values
sit just past them: ``NULL`` (a void epoch, index ``M``) and ``MASK``
(index ``M + 1``). Use :func:`null_label` / :func:`mask_label` rather than
hard-coding them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

MAX_REDRAWS = 100


def null_label(label_count: int) -> int:
    return label_count


def mask_label(label_count: int) -> int:
    return label_count + 1


class DatasetFormatError(ValueError):
    """A dataset file or in-memory sequence violates the stream invariants."""


def _check_times(times: np.ndarray, horizon: float) -> None:
    if horizon <= 0 or not math.isfinite(horizon):
        raise DatasetFormatError(f"horizon must be a positive finite number, got {horizon}")
    if times.size:
        if not np.all(np.isfinite(times)):
            raise DatasetFormatError("event times must be finite")
        if np.any(np.diff(times) <= 0):
            raise DatasetFormatError("event times must be strictly increasing")
        if times[0] < 0 or times[-1] > horizon:
            raise DatasetFormatError(f"event times must lie in [0, {horizon}]")


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Labelled events on ``[0, horizon]`` with ``label_count`` real labels."""

    times: np.ndarray
    labels: np.ndarray
    horizon: float
    label_count: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "horizon", float(self.horizon))
        if self.label_count < 1:
            raise DatasetFormatError(f"label_count must be >= 1, got {self.label_count}")
        if times.shape != labels.shape:
            raise DatasetFormatError("times and labels differ in length")
        _check_times(times, self.horizon)
        if labels.size and (labels.min() < 0 or labels.max() >= self.label_count):
            raise DatasetFormatError(f"labels must be real labels in 0..{self.label_count - 1}")

    @classmethod
    def from_events(cls, events: Iterable[tuple[float, int]], horizon: float, label_count: int) -> "EventSequence":
        events = list(events)
        times = [float(t) for t, _ in events]
        labels = [int(y) for _, y in events]
        return cls(np.array(times, dtype=np.float64), np.array(labels, dtype=np.int64), horizon, label_count)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def events(self) -> list[tuple[float, int]]:
        return [(float(t), int(y)) for t, y in zip(self.times, self.labels)]

    def prefix(self, n: int) -> "EventSequence":
        return EventSequence(self.times[:n], self.labels[:n], self.horizon, self.label_count)

    def __eq__(self, other):
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.label_count == other.label_count
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.labels, other.labels)
        )


class Epoch(NamedTuple):
    observed_time: float
    observed_label: int
    true_time: float
    true_label: int
    is_void: bool
    is_masked: bool


@dataclass(frozen=True, eq=False)
class AugmentedSequence:
    """An event stream with void epochs merged in and (optionally) masked epochs.

    Stored column-wise; ``epochs`` gives the per-epoch record view.
    """

    true_time: np.ndarray
    true_label: np.ndarray
    is_void: np.ndarray
    is_masked: np.ndarray
    horizon: float
    label_count: int
    observed_time: np.ndarray = field(default=None)
    observed_label: np.ndarray = field(default=None)

    def __post_init__(self):
        tt = np.asarray(self.true_time, dtype=np.float64).reshape(-1)
        ty = np.asarray(self.true_label, dtype=np.int64).reshape(-1)
        void = np.asarray(self.is_void, dtype=bool).reshape(-1)
        masked = np.asarray(self.is_masked, dtype=bool).reshape(-1)
        m = self.label_count
        if not (tt.shape == ty.shape == void.shape == masked.shape):
            raise DatasetFormatError("augmented columns differ in length")
        _check_times(tt, float(self.horizon))
        if np.any(void != (ty == null_label(m))):
            raise DatasetFormatError("is_void must hold exactly where the true label is NULL")
        if ty.size and (ty.min() < 0 or ty.max() > null_label(m)):
            raise DatasetFormatError("true labels must be real labels or NULL")
        # observed columns are derived from the truth and the mask
        ot = np.where(masked, 0.0, tt)
        oy = np.where(masked, mask_label(m), ty)
        if self.observed_time is not None and not np.array_equal(np.asarray(self.observed_time, dtype=np.float64), ot):
            raise DatasetFormatError("masked epochs must observe time 0; unmasked epochs observe the true time")
        if self.observed_label is not None and not np.array_equal(np.asarray(self.observed_label, dtype=np.int64), oy):
            raise DatasetFormatError("masked epochs must observe MASK; unmasked epochs observe the true label")
        for name, val in (("true_time", tt), ("true_label", ty), ("is_void", void), ("is_masked", masked),
                          ("observed_time", ot), ("observed_label", oy), ("horizon", float(self.horizon))):
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return int(self.true_time.size)

    @property
    def epochs(self) -> list[Epoch]:
        return [
            Epoch(float(a), int(b), float(c), int(d), bool(e), bool(f))
            for a, b, c, d, e, f in zip(
                self.observed_time, self.observed_label, self.true_time, self.true_label, self.is_void, self.is_masked
            )
        ]

    def with_mask(self, masked: np.ndarray) -> "AugmentedSequence":
        return AugmentedSequence(self.true_time, self.true_label, self.is_void, masked, self.horizon, self.label_count)

    def source(self) -> EventSequence:
        """Drop void epochs and undo masking."""
        keep = ~self.is_void
        return EventSequence(self.true_time[keep], self.true_label[keep], self.horizon, self.label_count)

    def __eq__(self, other):
        if not isinstance(other, AugmentedSequence):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.label_count == other.label_count
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("true_time", "true_label", "is_void", "is_masked")
            )
        )


@dataclass(frozen=True)
class MaskPolicy:
    strategy: str = "independent"
    fraction: float = 0.15
    mean_run_length: float = 3.0

    def __post_init__(self):
        if self.strategy not in ("independent", "geometric"):
            raise ValueError(f"unknown mask strategy {self.strategy!r}; use 'independent' or 'geometric'")
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"mask fraction must be in (0, 1), got {self.fraction}")
        if self.strategy == "geometric" and not self.mean_run_length > 1.0:
            raise ValueError(f"mean_run_length must exceed 1, got {self.mean_run_length}")


def augment_plain(seq: EventSequence) -> AugmentedSequence:
    """Lift a raw stream to an augmented one with no voids and no masks."""
    n = len(seq)
    return AugmentedSequence(seq.times, seq.labels, np.zeros(n, bool), np.zeros(n, bool), seq.horizon, seq.label_count)


def inject_voids(seq: EventSequence, rng: np.random.Generator, count_per_gap: int = 1) -> AugmentedSequence:
    """Insert ``count_per_gap`` uniformly drawn void epochs inside every inter-event gap.

    A draw that lands on an existing epoch is redrawn; after ``MAX_REDRAWS``
    failed attempts that void is skipped.
    """
    if count_per_gap < 0:
        raise ValueError(f"count_per_gap must be >= 0, got {count_per_gap}")
    times = seq.times
    voids: list[float] = []
    for lo, hi in zip(times[:-1], times[1:]):
        taken: set[float] = set()
        for _ in range(count_per_gap):
            for _attempt in range(MAX_REDRAWS):
                t = float(rng.uniform(lo, hi))
                if lo < t < hi and t not in taken:
                    taken.add(t)
                    voids.append(t)
                    break
    n_void = len(voids)
    all_t = np.concatenate([times, np.asarray(voids, dtype=np.float64)])
    all_y = np.concatenate([seq.labels, np.full(n_void, null_label(seq.label_count), dtype=np.int64)])
    order = np.argsort(all_t, kind="stable")
    is_void = np.concatenate([np.zeros(len(seq), bool), np.ones(n_void, bool)])[order]
    return AugmentedSequence(all_t[order], all_y[order], is_void, np.zeros(all_t.size, bool), seq.horizon, seq.label_count)


def _geometric_mask(n: int, rng: np.random.Generator, fraction: float, mean_run: float) -> np.ndarray:
    # Two-state chain: masked runs ~ Geometric(1/mean_run); unmasked runs are
    # sized so the stationary masked share equals ``fraction``.
    p_end_mask = 1.0 / mean_run
    p_start_mask = p_end_mask * fraction / (1.0 - fraction)
    out = np.zeros(n, dtype=bool)
    u = rng.random(n)
    state = bool(u[0] < fraction) if n else False
    for i in range(n):
        if i > 0:
            state = (u[i] >= p_end_mask) if state else (u[i] < p_start_mask)
        out[i] = state
    return out


def apply_mask(aug: AugmentedSequence, rng: np.random.Generator, policy: MaskPolicy = MaskPolicy()) -> AugmentedSequence:
    if aug.is_masked.any():
        raise ValueError("sequence already carries mask flags")
    n = len(aug)
    if policy.strategy == "independent":
        masked = rng.random(n) < policy.fraction
    else:
        masked = _geometric_mask(n, rng, policy.fraction, policy.mean_run_length)
    return aug.with_mask(masked)


def mask_runs(masked: np.ndarray) -> np.ndarray:
    """Lengths of consecutive masked runs."""
    m = np.concatenate([[False], np.asarray(masked, bool), [False]]).astype(np.int8)
    d = np.diff(m)
    return np.flatnonzero(d == -1) - np.flatnonzero(d == 1)


def split(dataset: Sequence, rng: np.random.Generator, train_fraction: float) -> tuple[list, list]:
    """Random disjoint partition; the train part gets ``ceil(fraction * n)`` items.

    Items keep their original relative order inside each part.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    n_train = min(n, math.ceil(train_fraction * n - 1e-9))
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.permutation(n)[:n_train]] = True
    train = [dataset[i] for i in range(n) if chosen[i]]
    dev = [dataset[i] for i in range(n) if not chosen[i]]
    return train, dev


def rescale(seq: EventSequence, factor: float | None = None) -> EventSequence:
    """Divide times (and the horizon) by ``factor``; default maps the horizon to 1."""
    factor = seq.horizon if factor is None else float(factor)
    return EventSequence(seq.times / factor, seq.labels, seq.horizon / factor, seq.label_count)


# JSON Lines ---------------------------------------------------------------

def _label_out(y: int, m: int):
    if y == null_label(m):
        return "null"
    if y == mask_label(m):
        return "mask"
    return int(y)


def _label_in(v, m: int) -> int:
    if v == "null":
        return null_label(m)
    if v == "mask":
        return mask_label(m)
    if isinstance(v, bool) or not isinstance(v, int):
        raise DatasetFormatError(f"bad label {v!r}")
    return v


def to_record(seq) -> dict:
    if isinstance(seq, EventSequence):
        return {"T": seq.horizon, "M": seq.label_count, "events": [[float(t), int(y)] for t, y in zip(seq.times, seq.labels)]}
    m = seq.label_count
    return {
        "T": seq.horizon,
        "M": m,
        "events": [[float(t), _label_out(int(y), m)] for t, y in zip(seq.observed_time, seq.observed_label)],
        "void": [bool(v) for v in seq.is_void],
        "masked": [bool(v) for v in seq.is_masked],
        "t_true": [float(t) for t in seq.true_time],
        "y_true": [_label_out(int(y), m) for y in seq.true_label],
    }


def from_record(rec: dict):
    if not isinstance(rec, dict) or not {"T", "M", "events"} <= rec.keys():
        raise DatasetFormatError('record must be an object with keys "T", "M", "events"')
    horizon, m = rec["T"], rec["M"]
    if not isinstance(m, int) or isinstance(m, bool):
        raise DatasetFormatError('"M" must be an integer')
    events = rec["events"]
    if not isinstance(events, list) or any(not isinstance(e, list) or len(e) != 2 for e in events):
        raise DatasetFormatError('"events" must be a list of [t, y] pairs')
    if "void" not in rec:
        times = [float(t) for t, _ in events]
        labels = [_label_in(y, m) for _, y in events]
        return EventSequence(np.array(times, dtype=np.float64), np.array(labels, dtype=np.int64), float(horizon), m)
    try:
        aug = AugmentedSequence(
            np.array(rec["t_true"], dtype=np.float64),
            np.array([_label_in(y, m) for y in rec["y_true"]], dtype=np.int64),
            np.array(rec["void"], dtype=bool),
            np.array(rec["masked"], dtype=bool),
            float(horizon),
            m,
            observed_time=np.array([float(t) for t, _ in events], dtype=np.float64),
            observed_label=np.array([_label_in(y, m) for _, y in events], dtype=np.int64),
        )
    except KeyError as exc:
        raise DatasetFormatError(f"augmented record missing field {exc}") from None
    return aug


def dumps_jsonl(dataset: Iterable) -> str:
    return "".join(json.dumps(to_record(s), separators=(",", ":")) + "\n" for s in dataset)


def save_jsonl(dataset: Iterable, path) -> None:
    Path(path).write_text(dumps_jsonl(dataset), encoding="utf-8")


def load_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(from_record(json.loads(line)))
            except (json.JSONDecodeError, DatasetFormatError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
    return out

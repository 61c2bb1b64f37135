"""Proximal graphical event models: piecewise-constant intensities driven by
whether each parent label occurred recently.

Window rule (kept in :func:`in_window`): a parent event at time ``s`` is
active at time ``t`` iff ``s < t < s + w``. An event exactly ``w`` ago no
longer counts, and an event at ``t`` itself does not count yet.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..streams import EventSequence


def in_window(t, s, w):
    """Works elementwise on arrays."""
    return (s < t) & (t < s + w)


@dataclass(frozen=True, eq=False)
class PGEMParams:
    """Parameters keyed by label name; ``labels`` fixes the index order."""

    labels: tuple[str, ...]
    parents: dict[str, list[str]]
    windows: dict[str, list[float]]
    lambdas: dict[str, dict[tuple[int, ...], float]]
    end_time: float = 100.0

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "end_time", float(self.end_time))
        for lab in labels:
            pa = self.parents.get(lab, [])
            if any(p not in labels for p in pa):
                raise ValueError(f"{lab}: unknown parent in {pa}")
            if len(self.windows.get(lab, [])) != len(pa):
                raise ValueError(f"{lab}: {len(pa)} parents but {len(self.windows.get(lab, []))} windows")
            if any(w <= 0 for w in self.windows.get(lab, [])):
                raise ValueError(f"{lab}: windows must be positive")
            table = self.lambdas.get(lab, {})
            for state in itertools.product((0, 1), repeat=len(pa)):
                if state not in table:
                    raise ValueError(f"{lab}: missing rate for parent state {state}")
                if not table[state] >= 0:
                    raise ValueError(f"{lab}: negative rate for parent state {state}")
        # index form used by the numeric code
        idx = {lab: i for i, lab in enumerate(labels)}
        object.__setattr__(self, "_parent_idx", [np.array([idx[p] for p in self.parents.get(l, [])], dtype=np.int64) for l in labels])
        object.__setattr__(self, "_windows", [np.array(self.windows.get(l, []), dtype=np.float64) for l in labels])

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: str | int) -> int:
        return label if isinstance(label, (int, np.integer)) else self.labels.index(label)

    def rate(self, e: int, state: tuple[int, ...]) -> float:
        return float(self.lambdas[self.labels[e]][tuple(state)])


def _history(history) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(history, EventSequence):
        return history.times, history.labels
    pairs = list(history)
    return np.array([p[0] for p in pairs], dtype=np.float64), np.array([p[1] for p in pairs], dtype=np.int64)


def parent_state(params: PGEMParams, times: np.ndarray, labels: np.ndarray, t: float, e: int) -> tuple[int, ...]:
    """Parent-state bits for label ``e`` at time ``t``, recomputed from the full history."""
    bits = []
    for p, w in zip(params._parent_idx[e], params._windows[e]):
        bits.append(int(np.any(in_window(t, times[labels == p], w))))
    return tuple(bits)


def pgem_intensity(params: PGEMParams, history, t: float, e) -> float:
    times, labels = _history(history)
    e = params.index(e)
    return params.rate(e, parent_state(params, times, labels, t, e))


def _states_from_last(params: PGEMParams, last: np.ndarray, t: float) -> list[tuple[int, ...]]:
    # state on the open interval just after t; the latest occurrence of a
    # parent is the only one that can still be inside its window
    out = []
    for e in range(params.dim):
        out.append(tuple(int(t < last[p] + w) for p, w in zip(params._parent_idx[e], params._windows[e])))
    return out


def simulate_pgem(params: PGEMParams, rng: np.random.Generator, record_states: list | None = None) -> EventSequence:
    """Event-driven simulation on ``[0, end_time]``.

    Between change points (the next window expiry) every intensity is
    constant, so the next event is the minimum of competing exponentials; if
    it would land past the change point we advance there and redraw.
    If ``record_states`` is a list, the parent states in force at each
    accepted event are appended to it.
    """
    m = params.dim
    T = params.end_time
    last = np.full(m, -np.inf)
    t = 0.0
    times: list[float] = []
    labels: list[int] = []
    while t < T:
        states = _states_from_last(params, last, t)
        rates = np.array([params.rate(e, states[e]) for e in range(m)])
        expiries = [
            last[p] + w
            for e in range(m)
            for p, w in zip(params._parent_idx[e], params._windows[e])
            if last[p] + w > t
        ]
        change = min(expiries, default=math.inf)
        horizon = min(change, T)
        total = float(rates.sum())
        if total <= 0.0:
            t = horizon
            continue
        t_next = t + rng.exponential(1.0 / total)
        if t_next >= horizon:
            t = horizon
            continue
        e = int(rng.choice(m, p=rates / total))
        if record_states is not None:
            record_states.append(states)
        times.append(t_next)
        labels.append(e)
        last[e] = t_next
        t = t_next
    return EventSequence(np.array(times), np.array(labels, dtype=np.int64), T, m)


def _breakpoints(params: PGEMParams, seq: EventSequence) -> np.ndarray:
    T = params.end_time
    pts = [0.0, T, *seq.times.tolist()]
    for e in range(params.dim):
        for p, w in zip(params._parent_idx[e], params._windows[e]):
            pts.extend((seq.times[seq.labels == p] + w).tolist())
    pts = np.unique(np.asarray(pts))
    return pts[(pts >= 0.0) & (pts <= T)]


def pgem_compensator(params: PGEMParams, seq: EventSequence) -> float:
    """Exact integral of the total intensity: rates are constant between breakpoints."""
    pts = _breakpoints(params, seq)
    mids = 0.5 * (pts[:-1] + pts[1:])
    widths = np.diff(pts)
    total = 0.0
    for e in range(params.dim):
        code = np.zeros(mids.size, dtype=np.int64)
        for p, w in zip(params._parent_idx[e], params._windows[e]):
            s = seq.times[seq.labels == p]
            active = np.any(in_window(mids[:, None], s[None, :], w), axis=1)
            code = 2 * code + active
        table = np.array([params.rate(e, st) for st in itertools.product((0, 1), repeat=len(params._parent_idx[e]))])
        total += float(np.sum(widths * table[code]))
    return total


def pgem_loglik(params: PGEMParams, seq: EventSequence) -> float:
    event_term = 0.0
    for i, (t, y) in enumerate(zip(seq.times, seq.labels)):
        lam = params.rate(int(y), parent_state(params, seq.times[:i], seq.labels[:i], t, int(y)))
        if lam <= 0.0:
            warnings.warn(f"zero intensity at observed event {i} (t={t}, label={y}); log-likelihood is -inf",
                          RuntimeWarning, stacklevel=2)
            return -math.inf
        event_term += math.log(lam)
    return event_term - pgem_compensator(params, seq)

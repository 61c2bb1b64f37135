"""Multivariate Hawkes process with exponential kernels.

Kernel convention: ``phi[e, j](s) = A[e, j] * beta[e, j] * exp(-beta[e, j] * s)``,
so each adjacency entry is the kernel's total mass (branching ratio).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..streams import EventSequence


class SupercriticalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HawkesExpParams:
    baseline: np.ndarray
    decay: np.ndarray
    adjacency: np.ndarray
    end_time: float

    def __post_init__(self):
        mu = np.asarray(self.baseline, dtype=np.float64).reshape(-1)
        m = mu.size
        adj = np.asarray(self.adjacency, dtype=np.float64)
        beta = np.asarray(self.decay, dtype=np.float64)
        if beta.ndim == 0:
            beta = np.full((m, m), float(beta))
        if adj.shape != (m, m) or beta.shape != (m, m):
            raise ValueError(f"adjacency and decay must be {m}x{m}; got {adj.shape} and {beta.shape}")
        for name, arr in (("baseline", mu), ("decay", beta), ("adjacency", adj)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(mu < 0) or np.any(adj < 0) or np.any(beta <= 0):
            raise ValueError("need baseline >= 0, adjacency >= 0 and decay > 0")
        if not self.end_time > 0:
            raise ValueError(f"end_time must be positive, got {self.end_time}")
        object.__setattr__(self, "baseline", mu)
        object.__setattr__(self, "decay", beta)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "end_time", float(self.end_time))

    @property
    def dim(self) -> int:
        return self.baseline.size

    def replace(self, **changes) -> "HawkesExpParams":
        fields = dict(baseline=self.baseline, decay=self.decay, adjacency=self.adjacency, end_time=self.end_time)
        fields.update(changes)
        return HawkesExpParams(**fields)


def spectral_radius(a: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Perron root of a nonnegative matrix by power iteration.

    Iterates on ``a + I`` (same Perron vector, root shifted by one) so that
    periodic matrices still converge.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if not np.any(a):
        return 0.0
    b = a + np.eye(n)
    v = np.full(n, 1.0 / n)
    est = 0.0
    for _ in range(max_iter):
        w = b @ v
        new = w.sum()  # v sums to one, so this is the Rayleigh-like ratio
        v = w / new
        if abs(new - est) <= tol * max(1.0, new):
            return new - 1.0
        est = new
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def _history(history) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(history, EventSequence):
        return history.times, history.labels
    pairs = list(history)
    return np.array([p[0] for p in pairs], dtype=np.float64), np.array([p[1] for p in pairs], dtype=np.int64)


def hawkes_intensity(params: HawkesExpParams, history, t: float, e: int) -> float:
    """lambda_e(t) given events strictly before t."""
    times, labels = _history(history)
    if times.size and t < times[-1]:
        raise ValueError(f"query time {t} precedes the last history event at {times[-1]}")
    past = times < t
    dt = t - times[past]
    y = labels[past]
    beta = params.decay[e, y]
    return float(params.baseline[e] + np.sum(params.adjacency[e, y] * beta * np.exp(-beta * dt)))


def simulate_hawkes(params: HawkesExpParams, rng: np.random.Generator) -> EventSequence:
    """Ogata thinning on ``[0, end_time]``."""
    rho = spectral_radius(params.adjacency)
    if rho >= 1.0:
        raise SupercriticalError(f"adjacency spectral radius {rho:.6g} >= 1; process is not subcritical")
    mu, beta, jump = params.baseline, params.decay, params.adjacency * params.decay
    m = params.dim
    T = params.end_time
    excite = np.zeros((m, m))  # excite[e, j]: current contribution of type-j events to lambda_e
    t = 0.0
    times: list[float] = []
    labels: list[int] = []
    while True:
        # intensities only decay between events, so the current total bounds the future
        bound = float(mu.sum() + excite.sum())
        if bound <= 0.0:
            break
        w = rng.exponential(1.0 / bound)
        t_new = t + w
        if t_new > T:
            break
        excite *= np.exp(-beta * w)
        t = t_new
        lam = mu + excite.sum(axis=1)
        total = float(lam.sum())
        assert total <= bound * (1 + 1e-12), "thinning bound violated"
        if rng.random() * bound <= total:
            e = int(rng.choice(m, p=lam / total))
            times.append(t)
            labels.append(e)
            excite[:, e] += jump[:, e]
    return EventSequence(np.array(times), np.array(labels, dtype=np.int64), T, m)


def hawkes_compensator(params: HawkesExpParams, seq: EventSequence) -> float:
    """Integral of the total intensity over ``[0, T]``."""
    T = params.end_time
    y = seq.labels
    # sum_e A[e, y_i] (1 - exp(-beta[e, y_i] (T - t_i)))
    tail = params.adjacency[:, y] * (1.0 - np.exp(-params.decay[:, y] * (T - seq.times)))
    return float(params.baseline.sum() * T + tail.sum())


def hawkes_loglik(params: HawkesExpParams, seq: EventSequence) -> float:
    """Exact log-likelihood: sum of log-intensities at events minus the compensator."""
    t, y = seq.times, seq.labels
    n = t.size
    if n:
        dt = t[:, None] - t[None, :]
        beta = params.decay[y[:, None], y[None, :]]
        a = params.adjacency[y[:, None], y[None, :]]
        lower = np.tril(np.ones((n, n), dtype=bool), k=-1)
        contrib = np.where(lower, a * beta * np.exp(-beta * np.where(lower, dt, 0.0)), 0.0)
        lam = params.baseline[y] + contrib.sum(axis=1)
        if np.any(lam <= 0.0):
            i = int(np.argmax(lam <= 0.0))
            warnings.warn(f"zero intensity at observed event {i} (t={t[i]}, label={y[i]}); log-likelihood is -inf",
                          RuntimeWarning, stacklevel=2)
            return -math.inf
        event_term = float(np.log(lam).sum())
    else:
        event_term = 0.0
    return event_term - hawkes_compensator(params, seq)


def expected_counts(params: HawkesExpParams, rtol: float = 1e-10) -> np.ndarray:
    """E[N_e(T)] from the linear ODE satisfied by the mean intensity.

    Integrates ``dx[e,j]/dt = -beta[e,j] x[e,j] + A[e,j] beta[e,j] m_j(t)``
    with ``m = mu + x.sum(1)``; independent of the thinning simulator.
    """
    from scipy.integrate import solve_ivp

    m = params.dim
    mu, beta, a = params.baseline, params.decay, params.adjacency

    def rhs(_, z):
        x = z[: m * m].reshape(m, m)
        lam = mu + x.sum(axis=1)
        dx = -beta * x + a * beta * lam[None, :]
        return np.concatenate([dx.ravel(), lam])

    sol = solve_ivp(rhs, (0.0, params.end_time), np.zeros(m * m + m), rtol=rtol, atol=1e-12, method="DOP853")
    return sol.y[m * m :, -1]

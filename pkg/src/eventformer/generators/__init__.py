from .hawkes import (
    HawkesExpParams,
    SupercriticalError,
    expected_counts,
    hawkes_compensator,
    hawkes_intensity,
    hawkes_loglik,
    simulate_hawkes,
    spectral_radius,
)
from .pgem import PGEMParams, in_window, parent_state, pgem_compensator, pgem_intensity, pgem_loglik, simulate_pgem
from .registry import UnknownModelError, available, get_model


def simulate(params, rng):
    """Dispatch to the simulator matching the parameter type."""
    if isinstance(params, HawkesExpParams):
        return simulate_hawkes(params, rng)
    return simulate_pgem(params, rng)


def loglik(params, seq):
    if isinstance(params, HawkesExpParams):
        return hawkes_loglik(params, seq)
    return pgem_loglik(params, seq)


__all__ = [
    "HawkesExpParams",
    "PGEMParams",
    "SupercriticalError",
    "UnknownModelError",
    "available",
    "expected_counts",
    "get_model",
    "hawkes_compensator",
    "hawkes_intensity",
    "hawkes_loglik",
    "in_window",
    "loglik",
    "parent_state",
    "pgem_compensator",
    "pgem_intensity",
    "pgem_loglik",
    "simulate",
    "simulate_hawkes",
    "simulate_pgem",
    "spectral_radius",
]

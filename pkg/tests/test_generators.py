import itertools
import math

import numpy as np
import pytest
from scipy import integrate

from eventformer.generators import (HawkesExpParams, PGEMParams, SupercriticalError, UnknownModelError, available,
                                    expected_counts, get_model, hawkes_compensator, hawkes_intensity, hawkes_loglik,
                                    in_window, loglik, parent_state, pgem_compensator, pgem_intensity, pgem_loglik,
                                    simulate, simulate_hawkes, simulate_pgem, spectral_radius)
from eventformer.generators.registry import raw_registry
from eventformer.seeding import stream
from eventformer.streams import EventSequence


def poisson_params(mu, T=10.0):
    m = len(mu)
    return HawkesExpParams(np.asarray(mu, float), 2.5, np.zeros((m, m)), T)


class TestRegistry:
    def test_families(self):
        assert available("hawkes") == list("ABCDEF")
        assert available("pgem") == list("ABCDE")

    def test_hawkes_a_values(self):
        p = get_model("hawkes", "A")
        assert p.end_time == 10
        assert p.dim == 10
        assert p.baseline[0] == 0.1097627
        assert p.baseline[9] == 0.0766883
        assert p.adjacency[0, 0] == 0.15037453
        assert np.all(p.decay == 2.5)

    def test_dimensions(self):
        for name in available("hawkes"):
            assert get_model("hawkes", name).dim == 10
        for name in available("pgem"):
            p = get_model("pgem", name)
            assert p.dim == 5 and p.end_time == 100

    def test_pgem_values(self):
        a = get_model("pgem", "A")
        assert a.lambdas["A"] == {(): 0.2}
        assert a.lambdas["C"] == {(0,): 0.2, (1,): 0.3}
        assert a.lambdas["D"][(1, 0)] == 0.3
        assert get_model("pgem", "E").parents["D"] == ["A", "E"]
        assert get_model("pgem", "B").windows["B"] == [30.0]

    def test_unknown_model_lists_names(self):
        with pytest.raises(UnknownModelError, match="A, B, C, D, E, F"):
            get_model("hawkes", "Z")
        with pytest.raises(UnknownModelError):
            get_model("poisson", "A")

    def test_all_models_subcritical(self):
        for name in available("hawkes"):
            assert spectral_radius(get_model("hawkes", name).adjacency) < 1

    def test_registry_is_plain_data(self):
        reg = raw_registry()
        assert set(reg) == {"hawkes", "pgem"}


class TestHawkesIntensity:
    def test_empty_history_is_baseline(self):
        p = get_model("hawkes", "A")
        for t in (0.0, 3.3, 9.0):
            assert hawkes_intensity(p, [], t, 4) == p.baseline[4]

    def test_long_after_history_returns_to_baseline(self):
        p = get_model("hawkes", "A")
        assert hawkes_intensity(p, [(0.5, 3), (1.0, 0)], 1e4, 0) == pytest.approx(0.1097627, abs=1e-15)

    def test_single_kernel(self):
        adj = np.zeros((2, 2))
        adj[0, 1] = 0.5
        p = HawkesExpParams(np.array([0.3, 0.1]), 2.5, adj, 10.0)
        expected = 0.3 + 0.5 * 2.5 * math.exp(-1.0)
        assert hawkes_intensity(p, [(0.0, 1)], 0.4, 0) == pytest.approx(expected, rel=1e-15)

    def test_query_before_last_event(self):
        with pytest.raises(ValueError):
            hawkes_intensity(get_model("hawkes", "A"), [(2.0, 0)], 1.0, 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            HawkesExpParams(np.array([-0.1]), 1.0, np.zeros((1, 1)), 1.0)
        with pytest.raises(ValueError):
            HawkesExpParams(np.array([0.1]), 0.0, np.zeros((1, 1)), 1.0)
        with pytest.raises(ValueError):
            HawkesExpParams(np.array([0.1, 0.2]), 1.0, np.zeros((1, 1)), 1.0)


class TestHawkesSimulation:
    def test_supercritical_rejected(self):
        p = HawkesExpParams(np.array([0.1, 0.1]), 1.0, np.full((2, 2), 0.6), 10.0)
        with pytest.raises(SupercriticalError):
            simulate_hawkes(p, np.random.default_rng(0))

    def test_spectral_radius_matches_eigvals(self):
        a = np.random.default_rng(2).uniform(0, 0.2, (6, 6))
        assert spectral_radius(a) == pytest.approx(max(abs(np.linalg.eigvals(a))), rel=1e-8)

    def test_silent_process(self):
        p = poisson_params([0.0, 0.0])
        assert len(simulate_hawkes(p, np.random.default_rng(0))) == 0

    def test_reproducible(self):
        p = get_model("hawkes", "A")
        assert simulate(p, stream(4, "sim")) == simulate(p, stream(4, "sim"))

    def test_poisson_counts(self):
        mu = np.array([0.5, 1.0, 2.0])
        p = poisson_params(mu)
        counts = np.array([np.bincount(simulate_hawkes(p, stream(0, "poisson", k)).labels, minlength=3)
                           for k in range(2000)])
        mean, se = mu * 10, np.sqrt(mu * 10 / 2000)
        assert np.all(np.abs(counts.mean(0) - mean) < 4 * se)

    def test_model_a_total_count_vs_ode(self):
        p = get_model("hawkes", "A")
        n = np.array([len(simulate_hawkes(p, stream(1, "ode", k))) for k in range(2000)])
        oracle = expected_counts(p).sum()
        assert abs(n.mean() - oracle) < 4 * n.std(ddof=1) / math.sqrt(n.size)

    def test_ode_oracle_poisson_reduction(self):
        np.testing.assert_allclose(expected_counts(poisson_params([0.5, 2.0])), [5.0, 20.0], rtol=1e-9)


class TestHawkesLoglik:
    def test_empty_sequence(self):
        p = get_model("hawkes", "A")
        empty = EventSequence(np.zeros(0), np.zeros(0, np.int64), 10.0, 10)
        assert hawkes_loglik(p, empty) == pytest.approx(-p.baseline.sum() * 10.0, rel=1e-15)

    def test_poisson_closed_form(self):
        mu = np.array([0.5, 1.0, 2.0])
        p = poisson_params(mu)
        seq = simulate_hawkes(p, np.random.default_rng(9))
        closed = np.log(mu[seq.labels]).sum() - mu.sum() * 10.0
        assert abs(hawkes_loglik(p, seq) - closed) <= 1e-9

    def test_compensator_matches_quadrature(self):
        p = get_model("hawkes", "A")
        seq = simulate_hawkes(p, np.random.default_rng(3))
        pts = np.concatenate([[0.0], seq.times, [p.end_time]])

        def total(t):
            past = seq.times < t
            return sum(hawkes_intensity(p, list(zip(seq.times[past], seq.labels[past])), t, e) for e in range(p.dim))

        numeric = sum(integrate.quad(total, a, b, epsabs=1e-12, epsrel=1e-12)[0] for a, b in zip(pts[:-1], pts[1:]))
        assert hawkes_compensator(p, seq) == pytest.approx(numeric, rel=1e-8)

    def test_event_term_matches_intensity(self):
        p = get_model("hawkes", "B")
        seq = simulate_hawkes(p, np.random.default_rng(5))
        seq = seq.prefix(min(len(seq), 60))
        p = p.replace(end_time=seq.horizon)
        events = seq.events
        brute = sum(math.log(hawkes_intensity(p, events[:i], t, y)) for i, (t, y) in enumerate(events))
        assert hawkes_loglik(p, seq) == pytest.approx(brute - hawkes_compensator(p, seq), rel=1e-12)

    def test_zero_intensity_is_minus_inf(self):
        p = poisson_params([0.0, 1.0])
        seq = EventSequence(np.array([1.0]), np.array([0]), 10.0, 2)
        with pytest.warns(RuntimeWarning, match="zero intensity"):
            assert hawkes_loglik(p, seq) == -math.inf

    def test_dominance_over_inflated_baseline(self):
        p = get_model("hawkes", "A")
        seqs = [simulate_hawkes(p, stream(2, "dominance", k)) for k in range(300)]
        true = np.mean([hawkes_loglik(p, s) for s in seqs])
        assert true > np.mean([hawkes_loglik(p.replace(baseline=p.baseline * 1.5), s) for s in seqs])

    def test_dispatch(self):
        p = get_model("hawkes", "A")
        seq = simulate(p, np.random.default_rng(0))
        assert loglik(p, seq) == hawkes_loglik(p, seq)


def small_pgem(rng, m=3, T=60.0):
    labels = tuple("XYZW"[:m])
    parents, windows, lambdas = {}, {}, {}
    for lab in labels:
        k = int(rng.integers(0, m + 1))
        pa = [labels[i] for i in sorted(rng.choice(m, size=min(k, m), replace=False))]
        parents[lab] = pa
        windows[lab] = [float(rng.uniform(1, 10)) for _ in pa]
        lambdas[lab] = {s: float(rng.uniform(0, 0.6)) for s in itertools.product((0, 1), repeat=len(pa))}
    return PGEMParams(labels, parents, windows, lambdas, T)


class TestPGEM:
    def test_window_predicate_boundary(self):
        assert in_window(24.999, 10.0, 15.0)
        assert not in_window(25.0, 10.0, 15.0)
        assert not in_window(10.0, 10.0, 15.0)

    def test_intensity_boundary(self):
        p = get_model("pgem", "A")
        hist = [(10.0, p.index("B"))]
        assert pgem_intensity(p, hist, 24.999, "C") == 0.3
        assert pgem_intensity(p, hist, 25.0, "C") == 0.2

    def test_model_a_rates(self):
        p = get_model("pgem", "A")
        assert pgem_intensity(p, [], 50.0, "C") == 0.2
        assert pgem_intensity(p, [(40.0, 1)], 50.0, "C") == 0.3
        for t in (7.0, 20.0, 99.0):
            assert pgem_intensity(p, [(5.0, 1), (6.0, 2)], t, "A") == 0.2

    def test_bit_order_follows_parent_list(self):
        p = get_model("pgem", "A")
        # D has parents [A, B]: A recent and B absent is key (1, 0)
        assert pgem_intensity(p, [(45.0, p.index("A"))], 50.0, "D") == 0.3
        assert pgem_intensity(p, [(45.0, p.index("B"))], 50.0, "D") == 0.05

    def test_validation(self):
        with pytest.raises(ValueError):
            PGEMParams(("A",), {"A": ["A"]}, {"A": []}, {"A": {(0,): 1.0, (1,): 1.0}})
        with pytest.raises(ValueError):
            PGEMParams(("A",), {"A": ["A"]}, {"A": [1.0]}, {"A": {(0,): 1.0}})
        with pytest.raises(ValueError):
            PGEMParams(("A",), {"A": []}, {"A": []}, {"A": {(): -1.0}})

    def test_root_counts(self):
        p = get_model("pgem", "A")
        counts = np.array([np.bincount(simulate_pgem(p, stream(0, "roots", k)).labels, minlength=5)[:2]
                           for k in range(1000)])
        for j, mean in ((0, 20.0), (1, 5.0)):
            assert abs(counts[:, j].mean() - mean) < 4 * math.sqrt(mean / counts.shape[0])

    def test_silent_model(self):
        p = PGEMParams(("A", "B"), {"A": ["B"], "B": []}, {"A": [5.0], "B": []},
                       {"A": {(0,): 0.0, (1,): 0.0}, "B": {(): 0.0}})
        assert len(simulate_pgem(p, np.random.default_rng(0))) == 0

    def test_refractory_renewal(self):
        r, w = 1.0, 2.0
        p = PGEMParams(("A",), {"A": ["A"]}, {"A": [w]}, {"A": {(0,): r, (1,): 0.0}}, end_time=31_000.0)
        seq = simulate_pgem(p, np.random.default_rng(8))
        gaps = np.diff(seq.times)
        assert gaps.size > 10_000
        assert np.all(gaps >= w)
        se = gaps.std() / math.sqrt(gaps.size)
        assert abs(gaps.mean() - (w + 1 / r)) < 4 * se

    def test_incremental_states_match_brute_force(self):
        rng = np.random.default_rng(21)
        for case in range(100):
            p = small_pgem(rng)
            states = []
            seq = simulate_pgem(p, np.random.default_rng(case), record_states=states)
            for i, (t, _) in enumerate(seq.events):
                brute = [parent_state(p, seq.times[:i], seq.labels[:i], t, e) for e in range(p.dim)]
                assert states[i] == brute

    def test_parentless_loglik(self):
        lam = 0.4
        p = PGEMParams(("A",), {"A": []}, {"A": []}, {"A": {(): lam}}, end_time=50.0)
        seq = simulate_pgem(p, np.random.default_rng(1))
        assert pgem_loglik(p, seq) == pytest.approx(len(seq) * math.log(lam) - lam * 50.0, rel=1e-12)

    def test_compensator_matches_quadrature(self):
        p = get_model("pgem", "A")
        seq = simulate_pgem(p, np.random.default_rng(2))
        seq = EventSequence(seq.times[:40], seq.labels[:40], 100.0, 5)

        def total(t):
            return sum(pgem_intensity(p, seq, t, e) for e in range(p.dim))

        # split only at event times; window expiries are left for the adaptive rule to find
        pts = np.concatenate([[0.0], seq.times[seq.times < 100.0], [100.0]])
        numeric = sum(integrate.quad(total, a, b, epsabs=1e-12, epsrel=1e-12, limit=500)[0]
                      for a, b in zip(pts[:-1], pts[1:]))
        assert pgem_compensator(p, seq) == pytest.approx(numeric, rel=1e-6)

    def test_compensator_nonnegative(self):
        rng = np.random.default_rng(4)
        for k in range(20):
            p = small_pgem(rng)
            assert pgem_compensator(p, simulate_pgem(p, np.random.default_rng(k))) >= 0

    def test_zero_rate_event_is_minus_inf(self):
        p = PGEMParams(("A",), {"A": ["A"]}, {"A": [5.0]}, {"A": {(0,): 1.0, (1,): 0.0}})
        seq = EventSequence(np.array([1.0, 2.0]), np.array([0, 0]), 100.0, 1)
        with pytest.warns(RuntimeWarning):
            assert pgem_loglik(p, seq) == -math.inf

    def test_dominance_over_halved_rates(self):
        p = get_model("pgem", "A")
        half = PGEMParams(p.labels, p.parents, p.windows,
                          {k: {s: r / 2 for s, r in v.items()} for k, v in p.lambdas.items()}, p.end_time)
        seqs = [simulate_pgem(p, stream(3, "pgem-dom", k)) for k in range(500)]
        assert np.mean([pgem_loglik(p, s) for s in seqs]) > np.mean([pgem_loglik(half, s) for s in seqs])

    def test_reproducible(self):
        p = get_model("pgem", "C")
        assert simulate(p, stream(4, "sim")) == simulate(p, stream(4, "sim"))

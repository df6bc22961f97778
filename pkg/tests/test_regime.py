import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from rsvolterra.regime import (GeneratorMatrix, RegimePath, StructuralError, frozen_path,
                               occupation_fractions, sample_path, sojourn_samples, state_at,
                               stationary_dist)

BASE = GeneratorMatrix.two_state(0.08, 0.008)

rates = st.floats(0.01, 10.0)


class TestGenerator:
    def test_two_state_layout(self):
        assert BASE.labels == ("S", "U")
        assert BASE.q.tolist() == [[-0.08, 0.08], [0.008, -0.008]]

    def test_rows_must_sum_to_zero(self):
        with pytest.raises(StructuralError):
            GeneratorMatrix([[-1.0, 0.5], [1.0, -1.0]])

    def test_negative_off_diagonal(self):
        with pytest.raises(StructuralError):
            GeneratorMatrix([[1.0, -1.0], [1.0, -1.0]])

    def test_reducible_has_no_unique_law(self):
        q = GeneratorMatrix.from_rates([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
        assert not q.is_irreducible()
        with pytest.raises(StructuralError):
            stationary_dist(q)


class TestStationary:
    def test_baseline(self):
        pi = stationary_dist(BASE)
        assert pi[1] == pytest.approx(0.90909, abs=1e-5)
        assert pi[0] == pytest.approx(0.09091, abs=1e-5)

    def test_symmetric(self):
        assert stationary_dist(GeneratorMatrix.two_state(0.3, 0.3)) == pytest.approx([0.5, 0.5])

    def test_cyclic_uniform(self):
        q = GeneratorMatrix.from_rates([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
        assert stationary_dist(q) == pytest.approx(np.full(3, 1 / 3), abs=1e-14)

    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_balance_residual(self, m, seed):
        rng = np.random.default_rng(seed)
        q = GeneratorMatrix.from_rates(rng.uniform(0.01, 5.0, (m, m)))
        pi = stationary_dist(q)
        assert np.all(pi > 0)
        assert pi.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(pi @ q.q)) <= 1e-10


class TestSamplePath:
    def test_mean_u_sojourn(self):
        Q = GeneratorMatrix.two_state(1.0, 0.008)
        rng = np.random.default_rng(11)
        soj = []
        while len(soj) < 10_000:
            soj.extend(sojourn_samples(sample_path(Q, 2e5, rng, init=0), 1).complete)
        soj = np.array(soj[:10_000])
        assert soj.mean() == pytest.approx(125.0, abs=3.0)

    def test_fast_exit_state_is_rarely_occupied(self):
        Q = GeneratorMatrix.two_state(1e4, 1.0)
        frac = occupation_fractions(sample_path(Q, 1e3, np.random.default_rng(0), init=0), 2)
        assert frac[0] < 1e-3

    def test_seed_replays_bit_for_bit(self):
        a = sample_path(BASE, 1e4, np.random.default_rng(5))
        b = sample_path(BASE, 1e4, np.random.default_rng(5))
        assert a.jump_times.tobytes() == b.jump_times.tobytes()
        assert a.states.tobytes() == b.states.tobytes()

    def test_stationary_initial_draw(self):
        inits = [sample_path(BASE, 1.0, np.random.default_rng(s)).initial_state
                 for s in range(2000)]
        assert np.mean(inits) == pytest.approx(10 / 11, abs=0.03)

    def test_absorbing_state_flagged(self):
        Q = GeneratorMatrix.from_rates([[0, 1.0], [0, 0]])
        p = sample_path(Q, 1e4, np.random.default_rng(1), init=0)
        assert p.absorbed and p.states[-1] == 1

    def test_occupation_converges(self):
        p = sample_path(BASE, 1e5, np.random.default_rng(2024))
        frac = occupation_fractions(p, 2)
        assert np.max(np.abs(frac - stationary_dist(BASE))) <= 0.02

    def test_u_sojourn_ks(self):
        rng = np.random.default_rng(3)
        soj = np.concatenate([sojourn_samples(sample_path(BASE, 1e4, rng), 1).complete
                              for _ in range(60)])
        assert stats.kstest(soj, "expon", args=(0, 1 / 0.008)).pvalue > 0.01

    @given(rates, rates, st.floats(0.1, 100.0), st.integers(0, 2**32 - 1))
    def test_path_invariants(self, a, b, T, seed):
        p = sample_path(GeneratorMatrix.two_state(a, b), T, np.random.default_rng(seed))
        assert np.all(np.diff(p.jump_times) > 0)
        assert np.all(p.states[1:] != p.states[:-1])
        assert occupation_fractions(p, 2).sum() == pytest.approx(1.0, abs=1e-12)
        total = sum(s.complete.sum() + (s.censored or 0.0)
                    for s in (sojourn_samples(p, 0), sojourn_samples(p, 1)))
        assert total == pytest.approx(T, rel=1e-12)

    def test_nonpositive_horizon(self):
        with pytest.raises(ValueError):
            sample_path(BASE, 0.0, np.random.default_rng(0))


class TestStateAt:
    path = RegimePath(np.array([1.0, 2.5, 4.0]), np.array([0, 1, 0, 1]), 6.0)

    def test_right_continuous_at_jumps(self):
        assert [state_at(self.path, t) for t in (1.0, 2.5, 4.0)] == [1, 0, 1]

    def test_no_jumps(self):
        p = frozen_path(1, 10.0)
        assert np.all(state_at(p, np.linspace(0, 10, 7)) == 1)

    @given(st.floats(0.0, 6.0))
    def test_matches_linear_scan(self, t):
        z = self.path.states[0]
        for jt, s in zip(self.path.jump_times, self.path.states[1:]):
            if t >= jt:
                z = s
        assert state_at(self.path, t) == z

    @pytest.mark.parametrize("t", [-0.1, 6.1])
    def test_domain(self, t):
        with pytest.raises(ValueError):
            state_at(self.path, t)

    def test_single_interval_indicator(self):
        assert occupation_fractions(frozen_path(1, 3.0), 2).tolist() == [0.0, 1.0]

    def test_never_visited_state(self):
        s = sojourn_samples(frozen_path(0, 3.0), 1)
        assert s.complete.size == 0 and s.censored is None

    def test_final_interval_censored(self):
        s = sojourn_samples(self.path, 1)
        assert s.complete.tolist() == [1.5] and s.censored == 2.0


class TestRegimePath:
    def test_rejects_repeated_state(self):
        with pytest.raises(ValueError):
            RegimePath(np.array([1.0]), np.array([0, 0]), 2.0)

    def test_rejects_unsorted_jumps(self):
        with pytest.raises(ValueError):
            RegimePath(np.array([2.0, 1.0]), np.array([0, 1, 0]), 3.0)

    def test_csv_roundtrip_is_exact(self):
        p = sample_path(BASE, 1e3, np.random.default_rng(9))
        q = RegimePath.from_csv(io.StringIO(p.to_csv_string()))
        assert q.T == p.T and q.jump_times.tobytes() == p.jump_times.tobytes()
        assert q.states.tolist() == p.states.tolist()

    def test_restrict(self):
        p = TestStateAt.path.restrict(3.0)
        assert p.jump_times.tolist() == [1.0, 2.5] and p.states.tolist() == [0, 1, 0]

    def test_occupation_integral(self):
        p = TestStateAt.path
        assert p.occupation_integral([0.0, 1.0], 6.0) == pytest.approx(1.5 + 2.0)

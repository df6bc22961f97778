import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from rsvolterra.network import (GraphGenerationError, Graph, OperatorSet, band_projection,
                                band_slices, build_dissipation, build_excitation, build_graph,
                                ipr, laplacian_spectrum)

KINDS = ["ring", "star", "erdos_renyi", "small_world"]


def spectrum_of(kind, n, seed=0):
    return laplacian_spectrum(build_graph(kind, n, np.random.default_rng(seed)))


class TestGraph:
    def test_ring(self):
        g = build_graph("ring", 6)
        assert g.n_edges == 6 and np.all(g.degrees() == 2)

    def test_star(self):
        g = build_graph("star", 40)
        assert g.n_edges == 39 and g.degrees().max() == 39

    def test_er_reproducible_and_binomial(self):
        a = build_graph("erdos_renyi", 40, np.random.default_rng(7), p=0.15)
        b = build_graph("erdos_renyi", 40, np.random.default_rng(7), p=0.15)
        assert np.array_equal(a.edges, b.edges)
        lo, hi = stats.binom.interval(0.99, 780, 0.15)
        assert lo <= a.n_edges <= hi

    def test_small_world_degree_sum(self):
        g = build_graph("small_world", 30, np.random.default_rng(1), k=4, p_rewire=0.2)
        assert g.n_edges == 60 and g.is_connected()

    @pytest.mark.parametrize("kind", KINDS)
    def test_invariants(self, kind):
        g = build_graph(kind, 25, np.random.default_rng(3))
        a = g.adjacency()
        assert np.array_equal(a, a.T) and not np.any(np.diag(a)) and g.is_connected()

    def test_disconnected_er_fails(self):
        with pytest.raises(GraphGenerationError):
            build_graph("erdos_renyi", 50, np.random.default_rng(0), p=0.001)

    @pytest.mark.parametrize("kwargs", [{"n": 2}, {"p": 0.0}, {"kind": "lattice"}])
    def test_bad_params(self, kwargs):
        args = {"kind": "erdos_renyi", "n": 10, "p": 0.3} | kwargs
        with pytest.raises(ValueError):
            build_graph(args.pop("kind"), args.pop("n"), np.random.default_rng(0), **args)

    def test_small_world_odd_k(self):
        with pytest.raises(ValueError):
            build_graph("small_world", 10, np.random.default_rng(0), k=3)

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError):
            Graph(3, [(0, 0)], "custom")

    def test_edge_csv(self):
        buf = io.StringIO()
        build_graph("ring", 3).to_csv(buf)
        assert buf.getvalue() == "source,target\n0,1\n0,2\n1,2\n"


class TestSpectrum:
    def test_ring_closed_form(self):
        mu = spectrum_of("ring", 8).eigenvalues
        expected = np.sort(2 - 2 * np.cos(2 * np.pi * np.arange(8) / 8))
        assert np.allclose(mu, expected, atol=1e-12)

    def test_star_closed_form(self):
        mu = spectrum_of("star", 10).eigenvalues
        assert np.allclose(mu, [0.0] + [1.0] * 8 + [10.0], atol=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_eigen_invariants(self, kind):
        g = build_graph(kind, 30, np.random.default_rng(4))
        s = laplacian_spectrum(g)
        V, L = s.eigenvectors, g.laplacian()
        assert np.max(np.abs(L @ V - V * s.eigenvalues)) <= 1e-8
        assert np.allclose(V.T @ V, np.eye(30), atol=1e-10)
        assert s.eigenvalues[0] == 0.0 and np.all(np.diff(s.eigenvalues) >= 0)
        assert np.allclose(V[:, 0], 1 / np.sqrt(30), atol=1e-10)

    def test_sign_convention(self):
        V = spectrum_of("erdos_renyi", 20).eigenvectors
        for i in range(20):
            lead = np.flatnonzero(np.abs(V[:, i]) > 1e-10)[0]
            assert V[lead, i] > 0


class TestExcitation:
    def test_commuting(self):
        s = spectrum_of("erdos_renyi", 20)
        A, L = build_excitation(s, 1.5, 1.444), s.laplacian()
        assert np.linalg.norm(A @ L - L @ A) <= 1e-10

    def test_norm_example(self):
        A = build_excitation(spectrum_of("ring", 12), 1.5, 1.444)
        assert np.linalg.norm(A, 2) == pytest.approx(1.0388, abs=1e-4)

    def test_noncommuting(self):
        s = spectrum_of("erdos_renyi", 20)
        A = build_excitation(s, 1.5, 1.444, "noncommuting", np.random.default_rng(2))
        L = s.laplacian()
        assert np.linalg.norm(A @ L - L @ A, 2) > 0.01 * np.linalg.norm(A, 2) * np.linalg.norm(L, 2)

    @given(st.floats(0.01, 10), st.floats(0.05, 20), st.sampled_from(["commuting", "noncommuting"]),
           st.integers(0, 1000))
    def test_gain_calibration(self, rho, G, mode, seed):
        A = build_excitation(spectrum_of("ring", 9), rho, G, mode, np.random.default_rng(seed))
        assert abs(np.linalg.norm(A, 2) * G - rho) <= 1e-8 * rho

    def test_infinite_mass_rejected(self):
        with pytest.raises(ValueError):
            build_excitation(spectrum_of("ring", 5), 1.0, np.inf)

    def test_scalar_system(self):
        assert build_excitation(None, 2.0, 1.0, n=1).tolist() == [[2.0]]


class TestDissipation:
    def test_scalar_resolvent(self):
        d = build_dissipation(1.5, 0.0, n=4)
        assert np.array_equal(d.matrix(), -1.5 * np.eye(8))
        b = np.random.default_rng(0).standard_normal((2, 4))
        assert np.allclose(d.resolvent(0.1).solve(b), b / 1.15, rtol=1e-15)

    @given(st.floats(0.01, 5), st.floats(0, 3), st.integers(0, 1000))
    def test_quadratic_form(self, beta, kappa, seed):
        s = spectrum_of("erdos_renyi", 12, 1)
        Bm = build_dissipation(beta, kappa, s).matrix()
        U = np.random.default_rng(seed).standard_normal((100, 24))
        q = np.einsum("ij,jk,ik->i", U, Bm, U)
        assert np.all(q <= -beta * np.sum(U * U, axis=1) * (1 - 1e-12))

    @given(st.floats(0.001, 1.0), st.floats(0.0, 3.0), st.integers(0, 1000))
    def test_solve_residual(self, dt, kappa, seed):
        s = spectrum_of("small_world", 16, 2)
        d = build_dissipation(1.5, kappa, s)
        b = np.random.default_rng(seed).standard_normal((2, 16))
        x = d.resolvent(dt).solve(b)
        lhs = (np.eye(32) - dt * d.matrix()) @ x.ravel()
        assert np.linalg.norm(lhs - b.ravel()) <= 1e-10 * np.linalg.norm(b)

    @pytest.mark.parametrize("beta,kappa", [(0.0, 0.0), (1.0, -0.1)])
    def test_invalid(self, beta, kappa):
        with pytest.raises(ValueError):
            build_dissipation(beta, kappa, n=3)

    def test_operator_set_shapes(self):
        d = build_dissipation(1.0, n=3)
        with pytest.raises(ValueError):
            OperatorSet(d, (np.eye(2),), (np.zeros((2, 3)),), (1.0,), (1.0,))


class TestIprAndBands:
    def test_uniform(self):
        assert ipr(np.ones(40)) == pytest.approx(0.025)

    def test_basis(self):
        assert ipr(np.eye(5)[2]) == 1.0

    def test_two_site(self):
        assert ipr([1.0, 1.0, 0, 0]) == pytest.approx(0.5)

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            ipr(np.zeros(3))

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=30))
    def test_ipr_range(self, v):
        v = np.array(v)
        if np.linalg.norm(v) < 1e-6:
            return
        assert 1 / v.size - 1e-12 <= ipr(v) <= 1 + 1e-12

    def test_eigenvector_is_band_indicator(self):
        s = spectrum_of("erdos_renyi", 20)
        for k in (0, 7, 19):
            f = band_projection(s, s.eigenvectors[:, k], 4)
            assert np.allclose(f, np.eye(4)[min(k // 5, 3)], atol=1e-12)

    def test_remainder_joins_last_band(self):
        assert [(b.start, b.stop) for b in band_slices(10, 3)] == [(0, 3), (3, 6), (6, 10)]

    def test_ring_projector_oracle(self):
        s = spectrum_of("ring", 8)
        v = np.random.default_rng(0).standard_normal(8)
        v /= np.linalg.norm(v)
        V = s.eigenvectors
        P = [V[:, :4] @ V[:, :4].T, V[:, 4:] @ V[:, 4:].T]
        assert np.allclose(band_projection(s, v, 2), [v @ p @ v for p in P], atol=1e-12)

    @given(st.integers(0, 10_000), st.integers(1, 12))
    def test_fractions_are_probability(self, seed, nb):
        s = spectrum_of("small_world", 24, 5)
        f = band_projection(s, np.random.default_rng(seed).standard_normal(24), nb)
        assert np.all(f >= 0) and abs(f.sum() - 1) <= 1e-12

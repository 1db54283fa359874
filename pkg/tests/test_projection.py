import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import U_HAT0
from mzgrid.projection import (PHYSICISTS, HermiteBasis, Partition, build_quadrature,
                               enumerate_multi_indices, finite_rank_project, hermite_eval,
                               project_state, reconstruct, smolyak_standard)


@pytest.fixture(scope="module")
def basis5():
    return HermiteBasis.around(U_HAT0, 5)


@pytest.fixture(scope="module")
def rule7(basis5):
    return build_quadrature(basis5, 7)


class TestPartition:
    def test_already_projected(self):
        u = np.array([0.0, 0.0, -0.16, -0.3, 0.8])
        assert np.array_equal(project_state(u, Partition()), u)

    def test_definition(self):
        out = project_state([1, 2, 3, 9, 9], Partition())
        assert np.array_equal(out, [1, 2, 3, -0.3, 0.8])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=5, max_size=5))
    def test_idempotent_and_identity_on_resolved(self, u):
        part = Partition()
        once = project_state(u, part)
        assert np.array_equal(project_state(once, part), once)
        assert np.array_equal(once[:3], np.asarray(u)[:3])

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            Partition((0, 1, 2), (2, 4), (0.0, 1.0))

    def test_lift(self):
        u = Partition().lift(np.zeros((4, 3)))
        assert u.shape == (4, 5) and np.all(u[:, 3] == -0.3)


class TestMultiIndices:
    def test_count_56(self):
        assert len(enumerate_multi_indices(3, 5)) == 56

    def test_order_zero(self):
        assert enumerate_multi_indices(3, 0) == [(0, 0, 0)]

    def test_order_one(self):
        assert enumerate_multi_indices(3, 1) == [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]

    @pytest.mark.parametrize("d", range(1, 5))
    @pytest.mark.parametrize("p", range(0, 7))
    def test_binomial(self, d, p):
        idx = enumerate_multi_indices(d, p)
        assert len(idx) == math.comb(d + p, p)
        assert len(set(idx)) == len(idx)
        degrees = [sum(nu) for nu in idx]
        assert degrees == sorted(degrees)

    def test_lower_order_is_prefix(self):
        assert enumerate_multi_indices(3, 5)[:20] == enumerate_multi_indices(3, 3)


class TestHermite:
    def test_constant(self, basis5):
        assert hermite_eval(basis5, (0, 0, 0), [3.0, -1.0, 7.0]) == 1.0

    def test_physicists_linear(self):
        b = HermiteBasis.around(U_HAT0, 1, convention=PHYSICISTS)
        assert hermite_eval(b, (1, 0, 0), [0.013, 0.0, -0.16]) == pytest.approx(0.026)

    def test_outside_set(self, basis5):
        with pytest.raises(KeyError):
            hermite_eval(basis5, (6, 0, 0), U_HAT0)

    def test_gram_identity(self, basis5, rule7):
        h = basis5.evaluate(rule7.nodes)
        gram = (h * rule7.weights[:, None]).T @ h
        assert np.max(np.abs(gram - np.eye(basis5.size))) <= 1e-8

    @pytest.mark.parametrize("p", range(0, 6))
    def test_gram_identity_all_orders(self, p):
        b = HermiteBasis.around(U_HAT0, p)
        r = build_quadrature(b, 7)
        h = b.evaluate(r.nodes)
        assert np.max(np.abs((h * r.weights[:, None]).T @ h - np.eye(b.size))) <= 1e-8

    @pytest.mark.parametrize("convention", ["orthonormal", "physicists"])
    def test_gradient_fd(self, convention, rng):
        b = HermiteBasis.around(U_HAT0, 4, convention=convention)
        x = np.asarray(U_HAT0) + 0.01 * rng.normal(size=3)
        h = 1e-7
        fd = np.stack([(b.evaluate(x + h * e) - b.evaluate(x - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)
        g = b.gradient(x)
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(g)))

    def test_literal_not_orthonormal(self, rule7):
        b = HermiteBasis.around(U_HAT0, 1, convention=PHYSICISTS)
        h = b.evaluate(rule7.nodes)
        gram = (h * rule7.weights[:, None]).T @ h
        assert np.max(np.abs(gram - np.eye(4))) > 0.1


class TestQuadrature:
    def test_681_nodes(self, rule7):
        assert len(rule7) == 681

    def test_level_one(self, basis5):
        r = build_quadrature(basis5, 1)
        assert len(r) == 1
        assert np.allclose(r.nodes[0], U_HAT0) and r.weights[0] == pytest.approx(1.0)

    def test_moments(self, rule7, basis5):
        z = (rule7.nodes - np.asarray(basis5.means)) / np.asarray(basis5.stds)
        assert abs(rule7.integrate(np.ones(len(rule7))) - 1.0) <= 1e-12
        assert np.all(np.abs(rule7.integrate(z)) <= 1e-12)

    def test_weights_sum(self):
        for level in range(1, 8):
            _, w = smolyak_standard(3, level)
            assert abs(w.sum() - 1.0) <= 1e-10

    def test_exact_to_degree_13(self):
        # E[z^k] for a standard normal: (k-1)!! for even k, 0 for odd k
        z, w = smolyak_standard(3, 7)

        def moment(k):
            return 0.0 if k % 2 else float(math.prod(range(k - 1, 0, -2)))

        for nu in enumerate_multi_indices(3, 13):
            approx = np.sum(w * np.prod(z ** np.array(nu), axis=1))
            exact = math.prod(moment(k) for k in nu)
            assert approx == pytest.approx(exact, rel=1e-9, abs=1e-9), nu

    def test_tensor_rule(self, basis5):
        r = build_quadrature(basis5, 6, kind="tensor")
        assert len(r) == 216
        h = basis5.evaluate(r.nodes)
        assert np.max(np.abs((h * r.weights[:, None]).T @ h - np.eye(56))) <= 1e-8

    def test_unknown_kind(self, basis5):
        with pytest.raises(ValueError):
            build_quadrature(basis5, 3, kind="clenshaw")


class TestFiniteRankProjection:
    def test_constant(self, basis5, rule7):
        c = finite_rank_project(np.ones(len(rule7)), basis5, rule7)
        expected = np.zeros(56)
        expected[0] = 1.0
        assert np.max(np.abs(c - expected)) <= 1e-10

    def test_unit_vectors(self, basis5, rule7):
        h = basis5.evaluate(rule7.nodes)
        for mu in (1, 7, 20, 55):
            c = finite_rank_project(h[:, mu], basis5, rule7)
            assert np.max(np.abs(c - np.eye(56)[mu])) <= 1e-8

    def test_reproduces_polynomials(self, rule7):
        b = HermiteBasis.around(U_HAT0, 2)
        x = rule7.nodes
        poly = 3.0 + 100 * (x[:, 0] - 0.0) - 2e3 * (x[:, 1] * x[:, 2]) + 5e3 * x[:, 0] ** 2
        rec = reconstruct(finite_rank_project(poly, b, rule7), b, x)
        assert np.max(np.abs(rec - poly)) <= 1e-8 * max(1.0, np.max(np.abs(poly)))

    def test_idempotent(self, basis5, rule7):
        samples = np.sin(100 * rule7.nodes[:, 0]) * np.cos(50 * rule7.nodes[:, 2])
        c1 = finite_rank_project(samples, basis5, rule7)
        c2 = finite_rank_project(reconstruct(c1, basis5, rule7.nodes), basis5, rule7)
        assert np.allclose(c1, c2, atol=1e-10)

    def test_length_mismatch(self, basis5, rule7):
        with pytest.raises(ValueError):
            finite_rank_project(np.ones(10), basis5, rule7)

"""Tests for the parameter manifold R x S^{d-1} x R."""

import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from src.errors import DomainError
from src.field import Ensemble
from src.geometry import (
    Particle,
    TangentVector,
    exp_map,
    exp_map_rows,
    geodesic_distance,
    optimal_matching,
    squared_distance_matrix,
    support_box_radius,
    tangent_project,
    wasserstein2,
)


def random_particle(rng, d=3):
    return Particle.create(rng.normal(), rng.standard_normal(d), rng.normal())


def random_tangent(rng, p):
    g = rng.standard_normal(p.d + 2)
    return tangent_project(p, g)


@pytest.mark.unit
class TestParticle:
    """Particle construction."""

    def test_create_normalizes_direction(self):
        p = Particle.create(1.0, [3.0, 4.0], 0.0)
        np.testing.assert_allclose(p.w, [0.6, 0.8])
        assert p.d == 2

    def test_zero_direction_rejected(self):
        with pytest.raises(DomainError):
            Particle.create(1.0, [0.0, 0.0], 0.0)


@pytest.mark.unit
class TestGeodesicDistance:
    """Distance on Theta."""

    def test_identity(self, rng):
        p = random_particle(rng)
        assert geodesic_distance(p, p) == 0.0

    def test_antipodal(self):
        p = Particle.create(0.5, [1.0, 0.0], 1.0)
        q = Particle.create(0.5, [-1.0, 0.0], 1.0)
        assert geodesic_distance(p, q) == pytest.approx(np.pi, abs=1e-12)

    def test_euclidean_block(self):
        p = Particle.create(3.0, [0.0, 1.0], 4.0)
        q = Particle.create(0.0, [0.0, 1.0], 0.0)
        assert geodesic_distance(p, q) == pytest.approx(5.0, abs=1e-14)

    def test_symmetry_and_triangle_inequality(self, rng):
        for _ in range(1000):
            p, q, r = (random_particle(rng) for _ in range(3))
            pq, qp = geodesic_distance(p, q), geodesic_distance(q, p)
            assert abs(pq - qp) <= 1e-10
            assert geodesic_distance(p, r) <= pq + geodesic_distance(q, r) + 1e-10


@pytest.mark.unit
class TestTangentProjection:
    """Projection of ambient vectors onto the tangent space."""

    def test_normal_direction_annihilated(self, rng):
        p = random_particle(rng)
        v = tangent_project(p, np.concatenate(([1.0], p.w, [2.0])))
        assert np.max(np.abs(v.dw)) <= 1e-15
        assert (v.da, v.db) == (1.0, 2.0)

    def test_tangent_vector_fixed(self):
        p = Particle.create(0.0, [1.0, 0.0, 0.0], 0.0)
        g = np.array([0.0, 0.0, 2.0, -1.0, 0.0])
        np.testing.assert_allclose(tangent_project(p, g).dw, [0.0, 2.0, -1.0])

    def test_projection_is_orthogonal(self, rng):
        for _ in range(50):
            p = random_particle(rng, d=5)
            v = random_tangent(rng, p)
            assert abs(np.dot(v.dw, p.w)) <= 1e-12 * max(1.0, np.linalg.norm(v.dw))

    def test_wrong_shape_rejected(self, rng):
        p = random_particle(rng, d=3)
        with pytest.raises(DomainError):
            tangent_project(p, np.zeros(4))


@pytest.mark.unit
class TestExpMap:
    """Exponential map: Euclidean in (a, b), great circle in w."""

    def test_zero_step(self, rng):
        p = random_particle(rng)
        q = exp_map(p, random_tangent(rng, p), 0.0)
        assert (q.a, q.b) == (p.a, p.b)
        np.testing.assert_allclose(q.w, p.w, atol=1e-15)

    def test_half_great_circle(self):
        p = Particle.create(1.0, [1.0, 0.0], 0.0)
        v = TangentVector(0.0, np.array([0.0, 2.0]), 0.0)
        q = exp_map(p, v, np.pi / 2.0)
        np.testing.assert_allclose(q.w, [-1.0, 0.0], atol=1e-12)

    def test_stays_on_sphere(self, rng):
        for _ in range(100):
            p = random_particle(rng, d=4)
            q = exp_map(p, random_tangent(rng, p), rng.uniform(0.0, 10.0))
            assert abs(np.linalg.norm(q.w) - 1.0) <= 1e-12

    def test_first_order_velocity(self, rng):
        """(exp_map(p, v, eps) - p) / eps -> v with first-order error."""
        p = random_particle(rng)
        v = random_tangent(rng, p)

        def error(eps):
            q = exp_map(p, v, eps)
            ambient = np.concatenate(([q.a - p.a], q.w - p.w, [q.b - p.b])) / eps
            return np.linalg.norm(ambient - np.concatenate(([v.da], v.dw, [v.db])))

        ratio = error(1e-3) / error(1e-4)
        assert 8.0 <= ratio <= 12.0

    def test_rows_with_zero_velocity_unchanged(self):
        w = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(exp_map_rows(w, np.zeros((2, 2)), 0.3), w)


@pytest.mark.unit
class TestSupportRadius:
    """Smallest box K_r containing the support."""

    def test_single_particle(self):
        u = Ensemble(a=[2.0], w=[[1.0, 0.0]], b=[-3.0], tau=20.0)
        assert support_box_radius(u) == 3.0

    def test_largest_coordinate(self, ensemble):
        r = max(np.max(np.abs(ensemble.a)), np.max(np.abs(ensemble.b)))
        assert support_box_radius(ensemble) == r

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            support_box_radius(SimpleNamespace(a=np.array([]), b=np.array([])))


@pytest.mark.unit
class TestWasserstein:
    """Exact W2 between equal-size uniform ensembles."""

    def test_identity(self, ensemble):
        assert wasserstein2(ensemble, ensemble) == 0.0

    def test_singletons(self, rng):
        p, q = random_particle(rng), random_particle(rng)
        first = Ensemble.from_particles([p], tau=20.0)
        second = Ensemble.from_particles([q], tau=20.0)
        assert wasserstein2(first, second) == pytest.approx(geodesic_distance(p, q), abs=1e-12)

    def test_matches_exhaustive_permutations(self, rng, ensemble_factory):
        perms = list(itertools.permutations(range(4)))
        for _ in range(100):
            x, y = ensemble_factory(rng, m=4, d=3), ensemble_factory(rng, m=4, d=3)
            perm, dist = optimal_matching(x.a, x.w, x.b, y.a, y.w, y.b)
            cost = squared_distance_matrix(x.a, x.w, x.b, y.a, y.w, y.b)
            best = min(np.sum(cost[np.arange(4), list(p)]) for p in perms)
            assert np.sum(cost[np.arange(4), perm]) == pytest.approx(best, abs=1e-12)
            assert dist == pytest.approx(np.sqrt(best / 4), abs=1e-14)

    def test_metric_axioms(self, rng, ensemble_factory):
        for _ in range(100):
            x, y, z = (ensemble_factory(rng, m=4, d=3) for _ in range(3))
            xy = wasserstein2(x, y)
            assert abs(xy - wasserstein2(y, x)) <= 1e-10
            assert wasserstein2(x, z) <= xy + wasserstein2(y, z) + 1e-10

    def test_size_mismatch(self, rng, ensemble_factory):
        with pytest.raises(DomainError):
            wasserstein2(ensemble_factory(rng, m=3), ensemble_factory(rng, m=4))

    def test_too_many_particles(self, rng, ensemble_factory):
        big = ensemble_factory(rng, m=513)
        with pytest.raises(DomainError):
            wasserstein2(big, big)

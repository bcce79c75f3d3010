"""Tests for the L^2 functionals, particle potentials and the constrained velocity."""

import numpy as np
import pytest

from src.errors import ConfigurationError, DegenerateMeasureError, DomainError
from src.field import Ensemble, feature, feature_xgrad
from src.functionals import (
    AnalyticField,
    QuadratureKind,
    QuadratureSet,
    constrained_potential_rows,
    constraint,
    energy,
    energy_gradient,
    ensemble_gradients,
    grad_C,
    grad_V,
    potential_C,
    potential_V,
    rayleigh_quotient,
    sample_field,
    sample_uniform,
    sigma_mu,
    squared_norm,
    stationarity_residual,
    velocity,
)
from src.geometry import Particle, exp_map, tangent_project
from src.potentials import PotentialSpec, eval_potential
from src.reference import extend_to_d, solve_reference

ZERO = PotentialSpec.parse("zero")


def constant_field(c, d):
    return AnalyticField(lambda x: np.full(len(x), c), lambda x: np.zeros((len(x), d)))


def cosine_mode(d):
    """sqrt(2) cos(pi x_1): unit norm, Neumann eigenfunction with eigenvalue pi^2."""
    def value(x):
        return np.sqrt(2.0) * np.cos(np.pi * x[:, 0])

    def grad(x):
        out = np.zeros_like(x)
        out[:, 0] = -np.sqrt(2.0) * np.pi * np.sin(np.pi * x[:, 0])
        return out

    return AnalyticField(value, grad)


def random_particle(rng, d=2):
    return Particle.create(rng.normal(1.0, 0.5), rng.standard_normal(d), rng.uniform(-1.5, 0.5))


@pytest.mark.unit
class TestQuadratureSet:
    """Quadrature construction and validation."""

    def test_grid_size_and_weights(self):
        q = QuadratureSet.tensor_grid(2, 8)
        assert q.n == 81 and q.d == 2 and q.kind is QuadratureKind.GRID
        assert q.weights.sum() == pytest.approx(1.0, abs=1e-14)
        assert q.weights[0] == pytest.approx(0.25 / 64)

    def test_monte_carlo_weights(self, rng):
        q = sample_uniform(3, 50, rng)
        assert q.kind is QuadratureKind.MONTE_CARLO
        assert np.all(q.weights == 1.0 / 50)

    def test_grid_dimension_limit(self):
        with pytest.raises(ConfigurationError):
            QuadratureSet.tensor_grid(4, 8)

    def test_grid_needs_an_interval(self):
        with pytest.raises(ConfigurationError):
            QuadratureSet.tensor_grid(2, 0)

    def test_points_outside_cube_rejected(self):
        with pytest.raises(DomainError):
            QuadratureSet.monte_carlo(np.array([[0.5, 1.5]]))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(DomainError):
            QuadratureSet(np.array([[0.1], [0.2]]), np.array([0.5, 0.6]), QuadratureKind.MONTE_CARLO)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            QuadratureSet.monte_carlo(np.zeros((0, 2)))


@pytest.mark.unit
class TestScalarFunctionals:
    """E, C and the Rayleigh quotient."""

    def test_constant_one_has_zero_energy(self):
        q = QuadratureSet.tensor_grid(2, 16)
        u = constant_field(1.0, 2)
        assert energy(u, q, ZERO) == 0.0
        assert constraint(u, q) == pytest.approx(0.0, abs=1e-14)

    def test_constraint_of_constant(self):
        q = QuadratureSet.tensor_grid(1, 16)
        assert constraint(constant_field(2.0, 1), q) == pytest.approx(1.0, abs=1e-14)
        assert squared_norm(constant_field(0.5, 1), q) == pytest.approx(0.25, abs=1e-15)

    def test_cosine_mode_energy(self):
        q = QuadratureSet.tensor_grid(2, 64)
        u = cosine_mode(2)
        assert energy(u, q, ZERO) == pytest.approx(np.pi ** 2, abs=1e-8)
        assert rayleigh_quotient(u, q, ZERO) == pytest.approx(np.pi ** 2, abs=1e-8)

    def test_constant_potential_shifts_rayleigh(self, unit_ensemble, grid2):
        shifted = rayleigh_quotient(unit_ensemble, grid2, PotentialSpec.parse("constant:3.5"))
        assert shifted == pytest.approx(rayleigh_quotient(unit_ensemble, grid2, ZERO) + 3.5, abs=1e-10)

    def test_rayleigh_of_zero_function(self, grid2):
        with pytest.raises(DegenerateMeasureError):
            rayleigh_quotient(constant_field(0.0, 2), grid2, ZERO)

    def test_monte_carlo_agrees_with_grid(self, ensemble, rng):
        exact = squared_norm(ensemble, QuadratureSet.tensor_grid(2, 128))
        batches = np.array([squared_norm(ensemble, sample_uniform(2, 256, rng)) for _ in range(32)])
        stderr = batches.std(ddof=1) / np.sqrt(batches.size)
        assert abs(batches.mean() - exact) <= 4.0 * stderr


@pytest.mark.unit
class TestParticlePotentials:
    """V(theta) and C(theta) at single particles."""

    def test_zero_amplitude(self, unit_ensemble, grid2, cos1d):
        p = Particle.create(0.0, [0.6, 0.8], 0.1)
        assert potential_V(unit_ensemble, p, grid2, cos1d) == 0.0
        assert potential_C(unit_ensemble, p, grid2) == 0.0

    def test_particle_outside_reach(self, unit_ensemble, grid2, cos1d):
        p = Particle.create(1.0, [0.6, 0.8], np.sqrt(2) + 2.0)
        assert abs(potential_V(unit_ensemble, p, grid2, cos1d)) <= 1e-12
        assert abs(potential_C(unit_ensemble, p, grid2)) <= 1e-12

    def test_matches_naive_sum(self, ensemble, cos1d, rng):
        q = QuadratureSet.tensor_grid(2, 8)
        p = random_particle(rng)
        naive = 0.0
        for x, wt in zip(q.points, q.weights):
            u_x = np.mean([feature(r, x, ensemble.tau) for r in ensemble.particles])
            g_x = np.mean([feature_xgrad(r, x, ensemble.tau) for r in ensemble.particles], axis=0)
            naive += wt * (np.dot(g_x, feature_xgrad(p, x, ensemble.tau))
                           + eval_potential(cos1d, x) * u_x * feature(p, x, ensemble.tau))
        assert potential_V(ensemble, p, q, cos1d) == pytest.approx(naive, rel=1e-12, abs=1e-12)

    def test_singleton_constraint_potential_is_norm(self, rng, grid2):
        p = random_particle(rng)
        u = Ensemble.from_particles([p], tau=20.0)
        assert potential_C(u, p, grid2) == pytest.approx(np.sqrt(squared_norm(u, grid2)), rel=1e-12)

    def test_zero_field_rejected(self, grid2):
        u = Ensemble(a=[0.0, 0.0], w=[[1.0, 0.0], [0.0, 1.0]], b=[0.0, 0.0], tau=20.0)
        with pytest.raises(DegenerateMeasureError):
            potential_C(u, Particle.create(1.0, [1.0, 0.0], 0.0), grid2)

    def test_analytic_field_needs_tau(self, grid2):
        p = Particle.create(1.0, [1.0, 0.0], 0.0)
        with pytest.raises(DomainError):
            potential_V(cosine_mode(2), p, grid2, ZERO)
        assert np.isfinite(potential_V(cosine_mode(2), p, grid2, ZERO, tau=20.0))


@pytest.mark.unit
class TestParticleGradients:
    """Riemannian gradients of V and C."""

    @pytest.mark.parametrize("which", ["V", "C"])
    def test_directional_derivative_matches_differences(self, which, unit_ensemble, grid2, cos1d, rng):
        eps = 1e-6

        def potential(p):
            if which == "V":
                return potential_V(unit_ensemble, p, grid2, cos1d)
            return potential_C(unit_ensemble, p, grid2)

        for _ in range(5):
            p = random_particle(rng)
            v = tangent_project(p, rng.standard_normal(4))
            grad = grad_V(unit_ensemble, p, grid2, cos1d) if which == "V" else grad_C(unit_ensemble, p, grid2)
            fd = (potential(exp_map(p, v, eps)) - potential(exp_map(p, v, -eps))) / (2 * eps)
            analytic = grad.dot(v)
            assert abs(fd - analytic) <= 1e-5 * max(1.0, abs(analytic))

    def test_zero_amplitude_moves_only_amplitude(self, unit_ensemble, grid2, cos1d):
        p = Particle.create(0.0, [0.6, 0.8], 0.1)
        g = grad_V(unit_ensemble, p, grid2, cos1d)
        assert np.all(g.dw == 0.0) and g.db == 0.0

    def test_gradient_is_tangent(self, unit_ensemble, grid2, cos1d, rng):
        for _ in range(10):
            p = random_particle(rng)
            assert abs(np.dot(grad_V(unit_ensemble, p, grid2, cos1d).dw, p.w)) <= 1e-12
            assert abs(np.dot(grad_C(unit_ensemble, p, grid2).dw, p.w)) <= 1e-12

    def test_rows_match_single_particle_gradients(self, unit_ensemble, grid2, cos1d):
        grads = ensemble_gradients(unit_ensemble, grid2, cos1d)
        for i, p in enumerate(unit_ensemble.particles[:5]):
            single = grad_V(unit_ensemble, p, grid2, cos1d)
            assert single.da == pytest.approx(grads.grad_V.da[i], rel=1e-12, abs=1e-12)
            np.testing.assert_allclose(single.dw, grads.grad_V.dw[i], rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(energy_gradient(unit_ensemble, grid2, cos1d).db, grads.grad_V.db)

    def test_point_chunks_follow_ensemble_chunk_size(self, unit_ensemble, grid2, cos1d):
        u = unit_ensemble
        chunked = Ensemble(a=u.a, w=u.w, b=u.b, tau=u.tau, chunk_size=7)
        assert sample_field(chunked, grid2).chunk_size == 7
        assert sample_field(u, grid2).chunk_size == u.chunk_size
        plain, split = ensemble_gradients(u, grid2, cos1d), ensemble_gradients(chunked, grid2, cos1d)
        for name in ("grad_V", "grad_C"):
            for part in ("da", "dw", "db"):
                np.testing.assert_allclose(getattr(getattr(split, name), part), getattr(getattr(plain, name), part),
                                           rtol=1e-10, atol=1e-9)


@pytest.mark.unit
class TestVelocity:
    """Lagrange multiplier and the constrained velocity."""

    def test_multiplier_shift_by_constant_potential(self, unit_ensemble, grid2):
        shifted = sigma_mu(unit_ensemble, grid2, PotentialSpec.parse("constant:3.5"))
        assert shifted - sigma_mu(unit_ensemble, grid2, ZERO) == pytest.approx(3.5, abs=1e-9)

    def test_orthogonal_to_constraint_gradient(self, rng, grid2, cos1d, ensemble_factory, normalize):
        for _ in range(10):
            u = normalize(ensemble_factory(rng), grid2)
            v = velocity(u, grid2, cos1d)
            scale = np.sqrt(np.mean(v.rows.dots(v.rows)) * np.mean(v.constraint_gradient.dots(v.constraint_gradient)))
            assert abs(v.orthogonality()) <= 1e-10 * max(scale, 1.0)

    def test_slope_and_speed(self, unit_ensemble, grid2, cos1d):
        v = velocity(unit_ensemble, grid2, cos1d)
        assert v.local_slope == pytest.approx(np.sqrt(np.mean(v.rows.dots(v.rows))))
        assert v.max_speed() >= v.local_slope
        assert len(v.vectors) == unit_ensemble.m

    def test_zero_field_rejected(self, grid2, cos1d):
        u = Ensemble(a=[0.0, 0.0], w=[[1.0, 0.0], [0.0, 1.0]], b=[0.2, 0.4], tau=20.0)
        with pytest.raises(DegenerateMeasureError):
            velocity(u, grid2, cos1d)

    def test_constraint_gradient_non_degenerate(self, rng, grid2, ensemble_factory, normalize):
        for _ in range(10):
            u = normalize(ensemble_factory(rng), grid2)
            grads = ensemble_gradients(u, grid2, ZERO)
            spread = np.mean(grads.grad_C.dots(grads.grad_C)) * np.mean(u.a ** 2)
            assert spread >= 1.0 - 1e-10


@pytest.mark.unit
class TestStationarity:
    """Probe-based residual of V - sigma C."""

    def test_probe_outside_reach_is_zero(self, unit_ensemble, grid2, cos1d):
        d = 2
        row = constrained_potential_rows(unit_ensemble, np.ones(1), np.array([[0.6, 0.8]]),
                                         np.array([np.sqrt(d) + 2.0]), grid2, cos1d, sigma=5.0)
        assert abs(row[0]) <= 1e-12

    def test_random_ensemble_is_not_stationary(self, unit_ensemble, grid2, cos1d, rng):
        assert stationarity_residual(unit_ensemble, grid2, cos1d, 64, rng) > 0.1

    def test_reference_eigenfunction_is_nearly_stationary(self, rng):
        W = PotentialSpec.parse("cos1d:10")
        field = extend_to_d(solve_reference(W, 128), 2)
        q = QuadratureSet.tensor_grid(2, 128)
        assert stationarity_residual(field, q, W, 64, rng, tau=5.0) <= 2e-2

    def test_needs_a_probe(self, unit_ensemble, grid2, cos1d, rng):
        with pytest.raises(ConfigurationError):
            stationarity_residual(unit_ensemble, grid2, cos1d, 0, rng)

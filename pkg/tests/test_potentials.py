"""Tests for the benchmark potentials."""

import numpy as np
import pytest

from src.errors import ConfigurationError, DomainError
from src.potentials import PotentialKind, PotentialSpec, eval_potential, planar_restriction

ALL_SPECS = ["zero", "constant:3.5", "cos1d:100", "cos_diag:100", "exp_diag:100", "double_well:100"]


@pytest.mark.unit
class TestPotentialSpec:
    """Parsing and printing of potential specs."""

    @pytest.mark.parametrize("text", ALL_SPECS)
    def test_str_round_trip(self, text):
        spec = PotentialSpec.parse(text)
        assert str(spec) == text
        assert PotentialSpec.parse(str(spec)) == spec

    def test_default_amplitude(self):
        assert PotentialSpec.parse("cos1d") == PotentialSpec(PotentialKind.COS1D, 100.0)

    def test_case_and_whitespace(self):
        assert PotentialSpec.parse("  Double_Well:2 ") == PotentialSpec(PotentialKind.DOUBLE_WELL, 2.0)

    def test_zero_has_no_amplitude(self):
        assert PotentialSpec.parse("zero").amplitude == 0.0
        with pytest.raises(ConfigurationError):
            PotentialSpec.parse("zero:1")

    def test_uncommon_amplitude_survives_printing(self):
        spec = PotentialSpec(PotentialKind.COS1D, 0.1 + 0.2)
        assert PotentialSpec.parse(str(spec)) == spec

    @pytest.mark.parametrize("text", ["bogus", "constant", "cos1d:abc", "cos1d:inf", "zero:abc"])
    def test_rejected(self, text):
        with pytest.raises(ConfigurationError):
            PotentialSpec.parse(text)

    def test_min_dimension(self):
        assert PotentialSpec.parse("cos_diag").min_dimension == 2
        assert PotentialSpec.parse("cos1d").min_dimension == 1


@pytest.mark.unit
class TestEvalPotential:
    """Values of the potential variants."""

    def test_known_values(self):
        assert eval_potential(PotentialSpec.parse("cos1d:100"), np.array([0.0, 0.3])) == pytest.approx(100.0)
        assert eval_potential(PotentialSpec.parse("cos1d:100"), np.array([0.5, 0.3])) == pytest.approx(-100.0)
        assert eval_potential(PotentialSpec.parse("cos_diag:100"), np.array([0.4, 0.4])) == pytest.approx(-100.0)
        assert eval_potential(PotentialSpec.parse("exp_diag:100"), np.array([0.7, 0.7])) == pytest.approx(-100.0)
        assert eval_potential(PotentialSpec.parse("constant:3.5"), np.array([0.1])) == 3.5
        assert eval_potential(PotentialSpec.parse("zero"), np.array([0.1, 0.9])) == 0.0

    def test_double_well_values(self):
        W = PotentialSpec.parse("double_well:100")
        assert eval_potential(W, np.array([0.5])) == pytest.approx(100.0 / np.e, rel=1e-14)
        assert eval_potential(W, np.array([0.25])) == 0.0
        assert eval_potential(W, np.array([0.75])) == 0.0

    def test_single_point_is_float(self):
        assert isinstance(eval_potential(PotentialSpec.parse("cos1d"), np.array([0.2, 0.2])), float)

    def test_batch_shape(self, rng):
        out = eval_potential(PotentialSpec.parse("exp_diag"), rng.uniform(size=(17, 3)))
        assert out.shape == (17,)

    @pytest.mark.parametrize("text", ["cos_diag:100", "exp_diag:100"])
    def test_diagonal_symmetry(self, text, rng):
        W = PotentialSpec.parse(text)
        x = rng.uniform(size=(200, 3))
        swapped = x[:, [1, 0, 2]]
        np.testing.assert_allclose(eval_potential(W, x), eval_potential(W, swapped), atol=1e-12)

    @pytest.mark.parametrize("text", ALL_SPECS)
    def test_bounded_and_finite(self, text, rng):
        W = PotentialSpec.parse(text)
        values = eval_potential(W, rng.uniform(size=(1_000_000, 2)))
        assert np.all(np.isfinite(values))
        assert np.max(np.abs(values)) <= max(abs(W.amplitude), 0.0) * (1 + 1e-12)

    def test_only_first_two_coordinates_matter(self, rng):
        x = rng.uniform(size=(50, 5))
        y = x.copy()
        y[:, 2:] = rng.uniform(size=(50, 3))
        for text in ALL_SPECS:
            W = PotentialSpec.parse(text)
            np.testing.assert_array_equal(eval_potential(W, x), eval_potential(W, y))

    def test_diagonal_needs_two_dimensions(self):
        with pytest.raises(DomainError):
            eval_potential(PotentialSpec.parse("cos_diag"), np.array([0.5]))


@pytest.mark.unit
class TestPlanarRestriction:
    """W on the (x_1, x_2) plane for the reference solver."""

    @pytest.mark.parametrize("text", ALL_SPECS)
    def test_matches_full_evaluation(self, text):
        W = PotentialSpec.parse(text)
        x1, x2 = np.meshgrid(np.linspace(0, 1, 9), np.linspace(0, 1, 9), indexing="ij")
        planar = planar_restriction(W)(x1, x2)
        assert planar.shape == (9, 9)
        full = eval_potential(W, np.column_stack([x1.ravel(), x2.ravel(), np.full(81, 0.3)]))
        np.testing.assert_array_equal(planar.ravel(), full)

"""Tests for the invariant suite."""

import pytest

from src import checks
from src.checks import (
    Check,
    CheckSuite,
    Priority,
    check_activation_derivatives,
    check_fd_order,
    check_gradients_fd,
    check_h1_rate,
    check_non_degeneracy,
    check_orthogonality,
    check_w2_oracle,
    create_default_suite,
)
from src.geometry import TangentVector


@pytest.mark.unit
class TestCheckSuite:
    """Ordering and error handling of the suite."""

    def test_runs_in_priority_order(self):
        order = []
        suite = CheckSuite()
        suite.add_check(Check("solver", Priority.SOLVER, lambda: order.append("solver") or (True, "")))
        suite.add_check(Check("activation", Priority.ACTIVATION, lambda: order.append("activation") or (True, "")))
        results = suite.run_all()
        assert order == ["activation", "solver"]
        assert [r.name for r in results] == ["activation", "solver"]

    def test_exception_fails_only_that_check(self):
        def broken():
            raise RuntimeError("boom")

        results = (CheckSuite()
                   .add_check(Check("broken", Priority.GRADIENTS, broken))
                   .add_check(Check("fine", Priority.STRUCTURE, lambda: (True, "ok")))
                   .run_all())
        assert not results[0].passed and "boom" in results[0].detail
        assert results[1].passed and results[1].detail == "ok"
        assert all(r.seconds >= 0.0 for r in results)

    def test_default_suite_contents(self):
        suite = create_default_suite(seed=3)
        assert len(suite.checks) == 7
        assert min(c.priority.value for c in suite.checks) == Priority.ACTIVATION.value


@pytest.mark.unit
class TestIndividualChecks:
    """Each check passes on the shipped implementation (reduced sizes)."""

    def test_activation_derivatives(self):
        passed, detail = check_activation_derivatives(seed=1)
        assert passed, detail

    def test_h1_rate(self):
        passed, detail = check_h1_rate()
        assert passed, detail

    def test_gradients(self):
        passed, detail = check_gradients_fd(seed=1, particles=3, grid_n=32)
        assert passed, detail

    def test_gradients_default_size(self):
        passed, detail = check_gradients_fd(seed=2)
        assert passed, detail
        assert "over 50 particles" in detail

    def test_gradients_relative_error_detected(self, monkeypatch):
        """A 0.1% error in grad C fails however small the gradient is."""
        exact = checks.grad_C

        def skewed(*args, **kwargs):
            g = exact(*args, **kwargs)
            return TangentVector(da=1.001 * g.da, dw=1.001 * g.dw, db=1.001 * g.db)

        monkeypatch.setattr(checks, "grad_C", skewed)
        passed, _ = check_gradients_fd(seed=1, particles=10, grid_n=32)
        assert not passed

    def test_orthogonality(self):
        passed, detail = check_orthogonality(seed=1, ensembles=5)
        assert passed, detail

    def test_non_degeneracy(self):
        passed, detail = check_non_degeneracy(seed=1, ensembles=5)
        assert passed, detail

    def test_w2_oracle(self):
        passed, detail = check_w2_oracle(seed=1, pairs=20)
        assert passed, detail


@pytest.mark.slow
class TestFullSuite:
    """Full-size checks."""

    def test_fd_order(self):
        passed, detail = check_fd_order()
        assert passed, detail

    def test_default_suite_passes(self):
        results = create_default_suite(seed=0).run_all()
        assert all(r.passed for r in results), [(r.name, r.detail) for r in results if not r.passed]

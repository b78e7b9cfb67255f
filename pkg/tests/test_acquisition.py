"""Acquisition-function tests against analytic constants and Monte Carlo.

Frozen constants below were produced by the erf oracle in this file
(``phi_oracle``), not by the implementation under test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transferbo.acquisition import (
    AcquisitionContext,
    ConstraintPosterior,
    expected_improvement,
    probability_of_feasibility,
    probability_of_improvement,
    upper_confidence_bound,
)

PHI_1 = 0.8413447460685429     # phi_oracle(1.0)
PHI_3 = 0.9986501019683699     # phi_oracle(3.0)
PDF_0 = 0.3989422804014327     # 1/sqrt(2*pi)


def phi_oracle(u):
    """Standard normal CDF via math.erf, independent of scipy."""
    return 0.5 * (1.0 + math.erf(u / math.sqrt(2.0)))


def ei_mc_oracle(mu, v, incumbent, n=10**6, seed=0):
    rng = np.random.default_rng(seed)
    s = rng.normal(mu, math.sqrt(v), size=n)
    imp = np.maximum(s - incumbent, 0.0)
    return imp.mean(), imp.std() / math.sqrt(n)


# ---------------------------------------------------------------------------
# probability of improvement
# ---------------------------------------------------------------------------

def test_pi_at_incumbent_is_half():
    assert probability_of_improvement(1.0, 1.0, 1.0) == 0.5


def test_pi_one_sigma_above():
    assert phi_oracle(1.0) == pytest.approx(PHI_1, abs=1e-15)
    assert probability_of_improvement(2.0, 1.0, 1.0) == pytest.approx(PHI_1, abs=1e-12)


def test_pi_degenerate_posterior():
    assert probability_of_improvement(0.0, 0.0, 1.0) == 0.0
    assert probability_of_improvement(2.0, 0.0, 1.0) == 1.0
    assert probability_of_improvement(1.0, 0.0, 1.0) == 0.0


@settings(max_examples=200, deadline=None)
@given(mu=st.floats(-50, 50), v=st.floats(0, 1e4), y=st.floats(-50, 50))
def test_pi_in_unit_interval(mu, v, y):
    p = probability_of_improvement(mu, v, y)
    assert 0.0 <= p <= 1.0


# ---------------------------------------------------------------------------
# expected improvement
# ---------------------------------------------------------------------------

def test_ei_deterministic_improvement():
    assert expected_improvement(3.0, 0.0, 1.0) == 2.0


def test_ei_at_incumbent_unit_variance():
    value = expected_improvement(0.0, 1.0, 0.0)
    assert value == pytest.approx(PDF_0, abs=1e-12)
    mc, se = ei_mc_oracle(0.0, 1.0, 0.0)
    assert abs(value - mc) <= 3 * se


def test_ei_hopeless_point():
    assert expected_improvement(-10.0, 1.0, 0.0) < 1e-20


def test_ei_matches_monte_carlo_many_configs():
    rng = np.random.default_rng(99)
    for trial in range(20):
        mu = float(rng.uniform(-2, 2))
        v = float(rng.uniform(0.01, 4.0))
        y = float(rng.uniform(-2, 2))
        mc, se = ei_mc_oracle(mu, v, y, seed=trial)
        assert abs(expected_improvement(mu, v, y) - mc) <= 3 * se


def test_ei_monotone_in_mean_and_variance():
    mus = np.linspace(-3, 3, 25)
    vs = np.linspace(0.01, 5, 25)
    for v in (0.1, 1.0, 3.0):
        e = expected_improvement(mus, v, 0.0)
        assert (np.diff(e) >= -1e-12).all()
    for mu in (-1.0, 0.0, 2.0):
        e = expected_improvement(mu, vs, 0.0)
        assert (np.diff(e) >= -1e-12).all()


def test_ei_affine_equivariance_pi_invariance():
    rng = np.random.default_rng(4)
    for _ in range(10):
        mu, v, y = rng.uniform(-2, 2), rng.uniform(0.1, 2), rng.uniform(-2, 2)
        c = rng.uniform(0.5, 10)
        assert expected_improvement(c * mu, c**2 * v, c * y) == pytest.approx(
            c * expected_improvement(mu, v, y), rel=1e-10)
        assert probability_of_improvement(c * mu, c**2 * v, c * y) == pytest.approx(
            probability_of_improvement(mu, v, y), rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(mu=st.floats(-50, 50), v=st.floats(0, 1e4), y=st.floats(-50, 50))
def test_ei_nonnegative(mu, v, y):
    assert expected_improvement(mu, v, y) >= 0.0


# ---------------------------------------------------------------------------
# UCB
# ---------------------------------------------------------------------------

def test_ucb_pure_exploitation():
    assert upper_confidence_bound(1.5, 7.0, 0.0) == 1.5


def test_ucb_variance_weighting():
    assert upper_confidence_bound(1.0, 4.0, 2.0) == 9.0


def test_ucb_certain_point():
    for beta in (0.0, 1.0, 10.0):
        assert upper_confidence_bound(2.0, 0.0, beta) == 2.0


# ---------------------------------------------------------------------------
# probability of feasibility
# ---------------------------------------------------------------------------

def test_pf_on_boundary_is_half():
    c = ConstraintPosterior(mean=np.array([5.0]), variance=np.array([2.0]),
                            threshold=5.0)
    assert probability_of_feasibility([c])[0] == 0.5


def test_pf_two_boundaries_quarter():
    cs = [ConstraintPosterior(np.array([1.0]), np.array([0.5]), 1.0),
          ConstraintPosterior(np.array([-2.0]), np.array([3.0]), -2.0, direction="<=")]
    assert probability_of_feasibility(cs)[0] == 0.25


def test_pf_three_sigma_margins():
    expected = phi_oracle(3.0) ** 3
    assert expected == pytest.approx(PHI_3**3, abs=1e-15)
    cs = [ConstraintPosterior(np.array([3.0]), np.array([1.0]), 0.0)
          for _ in range(3)]
    assert probability_of_feasibility(cs)[0] == pytest.approx(expected, rel=1e-12)


def test_pf_leq_direction_flips_margin():
    c_ok = ConstraintPosterior(np.array([0.0]), np.array([1.0]), 3.0, direction="<=")
    c_bad = ConstraintPosterior(np.array([0.0]), np.array([1.0]), -3.0, direction="<=")
    assert probability_of_feasibility([c_ok])[0] == pytest.approx(PHI_3, abs=1e-12)
    assert probability_of_feasibility([c_bad])[0] == pytest.approx(1 - PHI_3, abs=1e-12)


def test_pf_single_constraint_is_pi_identity():
    rng = np.random.default_rng(12)
    mu = rng.uniform(-3, 3, size=10)
    v = rng.uniform(0.01, 2.0, size=10)
    thr = 0.7
    c = ConstraintPosterior(mu, v, thr)
    np.testing.assert_array_equal(probability_of_feasibility([c]),
                                  probability_of_improvement(mu, v, thr))


def test_pf_requires_constraints():
    with pytest.raises(ValueError):
        probability_of_feasibility([])


# ---------------------------------------------------------------------------
# ensemble triple
# ---------------------------------------------------------------------------

class StubModel:
    def __init__(self, mean, var):
        self._mean = np.asarray(mean, dtype=np.float64)
        self._var = np.asarray(var, dtype=np.float64)

    def posterior(self, x):
        class P:
            pass
        p = P()
        p.mean = self._mean
        p.variance = self._var
        return p


def test_triple_reduces_to_raw_acquisitions_when_certainly_feasible():
    ctx = AcquisitionContext(
        objective=StubModel([1.0], [0.5]),
        constraints=[StubModel([100.0], [1e-9])],
        thresholds=[0.0], directions=[">="],
        incumbent=0.3, beta=2.0)
    triple = ctx.score(np.zeros((1, 2)))[0]
    assert triple[0] == pytest.approx(upper_confidence_bound(1.0, 0.5, 2.0), rel=1e-12)
    assert triple[1] == pytest.approx(probability_of_improvement(1.0, 0.5, 0.3), rel=1e-12)
    assert triple[2] == pytest.approx(expected_improvement(1.0, 0.5, 0.3), rel=1e-12)


def test_triple_vanishes_when_certainly_infeasible():
    ctx = AcquisitionContext(
        objective=StubModel([1.0], [0.5]),
        constraints=[StubModel([-100.0], [1e-9])],
        thresholds=[0.0], directions=[">="],
        incumbent=0.3)
    triple = ctx.score(np.zeros((1, 2)))[0]
    assert np.allclose(triple, 0.0, atol=1e-12)


def test_triple_componentwise_oracle():
    rng = np.random.default_rng(31)
    for _ in range(10):
        mu0, v0 = rng.uniform(-2, 2), rng.uniform(0.01, 2)
        mu1, v1 = rng.uniform(-2, 2), rng.uniform(0.01, 2)
        thr = rng.uniform(-1, 1)
        y = rng.uniform(-2, 2)
        beta = rng.uniform(0, 4)
        ctx = AcquisitionContext(
            objective=StubModel([mu0], [v0]),
            constraints=[StubModel([mu1], [v1])],
            thresholds=[thr], directions=[">="],
            incumbent=y, beta=beta)
        triple = ctx.score(np.zeros((1, 3)))[0]
        pf = probability_of_feasibility(
            [ConstraintPosterior(np.array([mu1]), np.array([v1]), thr)])[0]
        assert triple[0] == pytest.approx(upper_confidence_bound(mu0, v0, beta) * pf, rel=1e-12)
        assert triple[1] == pytest.approx(probability_of_improvement(mu0, v0, y) * pf, rel=1e-12)
        assert triple[2] == pytest.approx(expected_improvement(mu0, v0, y) * pf, rel=1e-12)


def test_triple_no_incumbent_falls_back_to_feasibility_seeking():
    ctx = AcquisitionContext(
        objective=StubModel([2.0], [1.0]),
        constraints=[StubModel([0.5], [1.0])],
        thresholds=[0.0], directions=[">="],
        incumbent=None)
    triple = ctx.score(np.zeros((1, 2)))[0]
    pf = probability_of_feasibility(
        [ConstraintPosterior(np.array([0.5]), np.array([1.0]), 0.0)])[0]
    assert triple[1] == pytest.approx(pf, rel=1e-12)
    assert triple[2] == pytest.approx(pf, rel=1e-12)
    assert triple[0] == pytest.approx(upper_confidence_bound(2.0, 1.0, 2.0) * pf, rel=1e-12)


def test_triple_without_constraints_is_raw():
    ctx = AcquisitionContext(objective=StubModel([1.0], [0.25]), incumbent=0.0)
    triple = ctx.score(np.zeros((1, 2)))[0]
    assert triple[0] == pytest.approx(1.0 + 2.0 * 0.25)
    assert triple[2] == pytest.approx(expected_improvement(1.0, 0.25, 0.0))


def test_objective_sign_folds_minimization():
    ctx = AcquisitionContext(objective=StubModel([5.0], [0.0]), incumbent=-6.0,
                             objective_sign=-1.0)
    triple = ctx.score(np.zeros((1, 1)))[0]
    # mean 5 minimized == -5 maximized; improvement over -6 is 1
    assert triple[2] == pytest.approx(1.0)

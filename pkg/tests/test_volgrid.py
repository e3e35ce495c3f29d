import math

import numpy as np
import pytest

from volhmm.errors import NonConvergenceError, ValidationError
from volhmm.volgrid import (
    CirParams,
    ObservationScheme,
    TransitionMatrix,
    build_observation_scheme,
    cir_ergodic_law,
    cir_spot_grid,
    cir_transition_matrix,
    discretize_return,
    matrix_power,
    nonparam_transition_matrix,
    stationary_distribution,
)
from volhmm.specfun import gamma_cdf

SP500 = CirParams(alpha=2.2, beta=0.077, sigma=1.1)

# Frozen quadrature-CDF bisection oracle for the 16-state grid at the DGP
# parameters alpha=2.2, beta=0.077, sigma=1.1 (mpmath, 40 digits).
SP500_GRID_16 = [
    7.6330795868748133e-6, 9.0763132620705101e-5, 0.00038651969122163115,
    0.0010820285635612563, 0.0024097974730141419, 0.0046507548546689736,
    0.0081450955471191444, 0.013313821580324682, 0.020697064286198436,
    0.031021500796557346, 0.045323130833492997, 0.065186446742854767,
    0.09325969757834535, 0.13454063101077656, 0.20041103357441834,
    0.3280354021949544,
]


class TestObservationScheme:
    def test_sign_classifier(self):
        scheme = build_observation_scheme(2, 0.5)
        assert scheme.edges.tolist() == [0.0]
        assert scheme.n_bins == 2

    def test_equal_split(self):
        scheme = build_observation_scheme(4, 0.03)
        assert scheme.edges == pytest.approx([-0.03, 0.0, 0.03])

    def test_rejects_degenerate(self):
        with pytest.raises(ValidationError):
            build_observation_scheme(1, 0.5)

    def test_discretize(self):
        sign = ObservationScheme(edges=np.array([0.0]))
        assert discretize_return(-0.01, sign) == 0
        assert discretize_return(0.0, sign) == 1  # tie goes right
        wide = ObservationScheme(edges=np.array([-0.03, 0.0, 0.03]))
        assert discretize_return(0.05, wide) == 3
        assert discretize_return(-0.03, wide) == 1

    def test_edges_must_increase(self):
        with pytest.raises(ValidationError):
            ObservationScheme(edges=np.array([0.1, 0.1]))


class TestErgodicLaw:
    def test_sp500_preset_parameters(self):
        law = cir_ergodic_law(SP500)
        assert law.shape == pytest.approx(0.28, rel=1e-14)
        assert law.rate == pytest.approx(40.0 / 11.0, rel=1e-14)

    def test_mean_is_long_run_level(self, rng):
        for _ in range(10):
            p = CirParams(*rng.uniform(0.2, 3.0, 3))
            law = cir_ergodic_law(p)
            assert law.mean == pytest.approx(p.beta, rel=1e-12)

    def test_exponential_special_case(self):
        law = cir_ergodic_law(CirParams(1.0, 1.0, math.sqrt(2.0)))
        assert (law.shape, law.rate) == (pytest.approx(1.0), pytest.approx(1.0))


class TestSpotGrid:
    def test_rejects_single_state(self):
        with pytest.raises(ValidationError):
            cir_spot_grid(SP500, 1)

    def test_exponential_quantiles(self):
        grid = cir_spot_grid(CirParams(1.0, 1.0, math.sqrt(2.0)), 3)
        assert grid.values == pytest.approx(
            [math.log(4.0 / 3.0), math.log(2.0), math.log(4.0)], rel=1e-9
        )

    def test_sp500_grid_16(self):
        grid = cir_spot_grid(SP500, 16)
        assert np.all(np.diff(grid.values) > 0.0)
        assert grid.values == pytest.approx(SP500_GRID_16, rel=1e-8)


class TestCirTransitionMatrix:
    def test_rows_sum_to_one(self):
        grid = cir_spot_grid(SP500, 4)
        mat = cir_transition_matrix(SP500, grid, 0.25)
        assert np.max(np.abs(mat.probs.sum(axis=1) - 1.0)) < 1e-10

    def test_long_horizon_reaches_ergodic_masses(self):
        grid = cir_spot_grid(SP500, 4)
        mat = cir_transition_matrix(SP500, grid, 50.0 / SP500.alpha)
        law = cir_ergodic_law(SP500)
        mids = 0.5 * (grid.values[:-1] + grid.values[1:])
        cdfs = [gamma_cdf(m, law) for m in mids]
        masses = np.array([cdfs[0], cdfs[1] - cdfs[0], cdfs[2] - cdfs[1], 1.0 - cdfs[2]])
        assert np.max(np.abs(mat.probs - masses)) < 1e-6


class TestNonparamTransitionMatrix:
    def test_direct_fill(self):
        mat = nonparam_transition_matrix(np.array([0.3, 0.6]), 2)
        assert mat.probs == pytest.approx(np.array([[0.3, 0.7], [0.6, 0.4]]))

    def test_constraint_violation_names_row(self):
        with pytest.raises(ValidationError, match="row 0"):
            nonparam_transition_matrix(np.array([1.2, 0.5]), 2)

    def test_sixteen_states_need_240_parameters(self, rng):
        theta = rng.uniform(0.01, 0.99 / 15.0, 240)
        mat = nonparam_transition_matrix(theta, 16)
        assert mat.probs.shape == (16, 16)
        with pytest.raises(ValidationError):
            nonparam_transition_matrix(theta[:-1], 16)


class TestStationaryDistribution:
    def test_symmetric_two_state(self):
        mat = TransitionMatrix(probs=np.array([[0.9, 0.1], [0.1, 0.9]]))
        assert stationary_distribution(mat) == pytest.approx([0.5, 0.5], abs=1e-11)

    def test_identity_rejected(self):
        with pytest.raises(NonConvergenceError):
            stationary_distribution(TransitionMatrix(probs=np.eye(2)))

    def test_periodic_rejected(self):
        with pytest.raises(NonConvergenceError):
            stationary_distribution(TransitionMatrix(probs=np.array([[0.0, 1.0], [1.0, 0.0]])))

    def test_balance_equation(self):
        mat = TransitionMatrix(probs=np.array([[0.5, 0.5], [0.25, 0.75]]))
        assert stationary_distribution(mat) == pytest.approx([1.0 / 3.0, 2.0 / 3.0], abs=1e-11)

    def test_fixed_point(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 6))
            mat = TransitionMatrix(probs=rng.dirichlet(np.ones(n), size=n))
            pi = stationary_distribution(mat)
            assert pi @ mat.probs == pytest.approx(pi, abs=1e-10)


class TestMatrixPower:
    def test_identity_power(self):
        mat = TransitionMatrix(probs=np.array([[0.5, 0.5], [0.25, 0.75]]))
        assert matrix_power(mat, 1).probs == pytest.approx(mat.probs)

    def test_uniform_idempotent(self):
        mat = TransitionMatrix(probs=np.full((2, 2), 0.5))
        assert matrix_power(mat, 7).probs == pytest.approx(mat.probs)

    def test_hand_multiplication(self):
        mat = TransitionMatrix(probs=np.array([[0.5, 0.5], [0.25, 0.75]]))
        sq = matrix_power(mat, 2)
        assert sq.probs == pytest.approx(np.array([[0.375, 0.625], [0.3125, 0.6875]]))
        assert sq.dt == pytest.approx(2.0)

    def test_rows_stay_stochastic(self, rng):
        mat = TransitionMatrix(probs=rng.dirichlet(np.ones(5), size=5))
        assert np.max(np.abs(matrix_power(mat, 11).probs.sum(axis=1) - 1.0)) < 1e-10

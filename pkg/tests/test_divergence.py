import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensemble_flow.core import Marginal, TransferPlan, TransitionModel
from ensemble_flow.divergence import (
    kl_divergence,
    log_transfer_likelihood,
    plan_divergence,
    proposition1_bounds,
)
from ensemble_flow.errors import PreconditionError, SupportViolationError


class TestKlDivergence:
    def test_identical_inputs_give_zero(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_single_atom(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_support_violation_carries_index(self):
        with pytest.raises(SupportViolationError) as excinfo:
            kl_divergence([0.5, 0.5], [0.0, 1.0])
        assert excinfo.value.indices == (0,)

    def test_zero_numerator_entries_are_fine(self):
        assert kl_divergence([0.0, 1.0], [0.0, 1.0]) == 0.0

    def test_matrices_flatten(self):
        p = np.array([[0.2, 0.3], [0.1, 0.4]])
        q = np.array([[0.25, 0.25], [0.25, 0.25]])
        expected = kl_divergence(p.ravel(), q.ravel())
        assert kl_divergence(p, q) == pytest.approx(expected, rel=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(PreconditionError):
            kl_divergence([0.5, 0.5], [[0.5, 0.5]])

    def test_negative_input_rejected(self):
        with pytest.raises(PreconditionError):
            kl_divergence([-0.1, 1.1], [0.5, 0.5])

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative_on_equal_mass_pairs(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        p = rng.random(n) + 1e-6
        q = rng.random(n) + 1e-6
        q *= p.sum() / q.sum()
        assert kl_divergence(p, q) >= -1e-12

    def test_zero_iff_equal(self):
        rng = np.random.default_rng(3)
        p = rng.random(5) + 0.1
        q = p * 1.0
        assert kl_divergence(p, q) == 0.0
        q2 = p.copy()
        q2[0] += 0.05
        q2[1] -= 0.05
        assert kl_divergence(p, q2) > 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    def test_joint_convexity(self, seed, lam):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        p1, p2 = rng.random(n) + 1e-3, rng.random(n) + 1e-3
        q1, q2 = rng.random(n) + 1e-3, rng.random(n) + 1e-3
        mixed = kl_divergence(lam * p1 + (1 - lam) * p2, lam * q1 + (1 - lam) * q2)
        parts = lam * kl_divergence(p1, q1) + (1 - lam) * kl_divergence(p2, q2)
        assert mixed <= parts + 1e-10


class TestPlanDivergence:
    def test_matches_kl_when_no_underflow(self):
        rng = np.random.default_rng(8)
        weights = rng.random(3) + 0.1
        kernel = rng.random((3, 3)) + 0.1
        kernel /= kernel.sum(axis=1, keepdims=True)
        plan = rng.random((3, 3))
        expected = kl_divergence(plan, weights[:, None] * kernel)
        assert plan_divergence(plan, weights, kernel) == pytest.approx(expected, rel=1e-12)

    def test_survives_product_underflow(self):
        weights = np.array([1e-200, 1.0])
        kernel = np.array([[1e-150, 1.0 - 1e-150], [0.5, 0.5]])
        plan = np.array([[1e-250, 0.0], [0.0, 1.0]])
        # weights[0] * kernel[0, 0] underflows to exactly 0.0
        assert (weights[0] * kernel[0, 0]) == 0.0
        value = plan_divergence(plan, weights, kernel)
        assert np.isfinite(value)

    def test_real_mass_on_zero_support_raises(self):
        with pytest.raises(SupportViolationError):
            plan_divergence(np.array([[0.5, 0.5]]), np.array([1.0]), np.array([[0.0, 1.0]]))


def exact_log_likelihood_rational(prior, kernel_fracs, plan):
    """Exact-arithmetic evaluation of the multinomial plan probability."""
    prob = Fraction(1)
    for i, row_total in enumerate(prior):
        prob *= math.factorial(row_total)
        for j, flow in enumerate(plan[i]):
            prob /= math.factorial(flow)
            prob *= kernel_fracs[i][j] ** flow
    return prob


class TestLogTransferLikelihood:
    def test_uniform_two_state_identity_plan(self):
        value = log_transfer_likelihood(
            Marginal([1, 1]),
            TransitionModel([[0.5, 0.5], [0.5, 0.5]]),
            TransferPlan(np.eye(2), time_index=1),
        )
        assert value == pytest.approx(math.log(0.25), abs=1e-12)

    def test_multinomial_coefficient_counts(self):
        value = log_transfer_likelihood(
            Marginal([2, 0]),
            TransitionModel([[0.5, 0.5], [0.5, 0.5]]),
            TransferPlan([[1.0, 1.0], [0.0, 0.0]], time_index=1),
        )
        assert value == pytest.approx(math.log(0.5), abs=1e-12)

    def test_against_exact_rational_arithmetic(self):
        # regression constant computed from the Fraction oracle below
        prior = [3, 1]
        kernel_fracs = [
            [Fraction(1, 5), Fraction(4, 5)],
            [Fraction(3, 5), Fraction(2, 5)],
        ]
        plan = [[1, 2], [1, 0]]
        exact = exact_log_likelihood_rational(prior, kernel_fracs, plan)
        assert exact == Fraction(144, 625)
        expected = math.log(144.0 / 625.0)
        assert expected == pytest.approx(-1.4679383501604009, abs=1e-12)
        value = log_transfer_likelihood(
            Marginal(prior),
            TransitionModel([[0.2, 0.8], [0.6, 0.4]]),
            TransferPlan(plan, time_index=1),
        )
        assert value == pytest.approx(expected, abs=1e-12)

    def test_zero_probability_plan_is_minus_infinity(self):
        value = log_transfer_likelihood(
            Marginal([1, 1]),
            TransitionModel([[1.0, 0.0], [0.0, 1.0]]),
            TransferPlan([[0.0, 1.0], [1.0, 0.0]], time_index=1),
        )
        assert value == -math.inf

    def test_non_integer_entries_rejected(self):
        with pytest.raises(PreconditionError):
            log_transfer_likelihood(
                Marginal([1.5, 0.5]),
                TransitionModel([[0.5, 0.5], [0.5, 0.5]]),
                TransferPlan([[1.0, 0.5], [0.5, 0.0]], time_index=1),
            )

    def test_row_sum_mismatch_rejected(self):
        with pytest.raises(PreconditionError):
            log_transfer_likelihood(
                Marginal([2, 1]),
                TransitionModel([[0.5, 0.5], [0.5, 0.5]]),
                TransferPlan(np.eye(2), time_index=1),
            )

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_exhaustive_particle_enumeration(self, seed):
        # every labeled-particle assignment consistent with the plan
        rng = np.random.default_rng(seed)
        n = 2
        prior = rng.multinomial(int(rng.integers(2, 5)), [0.5, 0.5])
        kernel = rng.random((n, n)) + 0.1
        kernel /= kernel.sum(axis=1, keepdims=True)
        plan = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            if prior[i]:
                plan[i] = rng.multinomial(prior[i], kernel[i])
        prob = 1.0
        for i in range(n):
            row_prob = 0.0
            for assignment in itertools.product(range(n), repeat=int(prior[i])):
                counts = [assignment.count(j) for j in range(n)]
                if np.array_equal(counts, plan[i]):
                    row_prob += float(np.prod([kernel[i, j] for j in assignment]))
            prob *= row_prob if prior[i] else 1.0
        value = log_transfer_likelihood(
            Marginal(prior), TransitionModel(kernel), TransferPlan(plan, time_index=1)
        )
        assert math.exp(value) == pytest.approx(prob, abs=1e-10)


class TestProposition1Bounds:
    def test_requires_two_agents(self):
        with pytest.raises(PreconditionError):
            proposition1_bounds(
                Marginal([1, 0]),
                TransitionModel([[0.5, 0.5], [0.5, 0.5]]),
                TransferPlan([[1.0, 0.0], [0.0, 0.0]], time_index=1),
            )

    def test_two_agent_uniform_example(self):
        report = proposition1_bounds(
            Marginal([1, 1]),
            TransitionModel([[0.5, 0.5], [0.5, 0.5]]),
            TransferPlan(np.eye(2), time_index=1),
        )
        assert report.n_particles == 2.0
        assert report.exact_log_likelihood == pytest.approx(math.log(0.25), abs=1e-12)
        assert report.kl_rate == pytest.approx(2.0 * math.log(2.0), abs=1e-12)
        assert report.upper_slack >= 0.0
        assert report.lower_slack >= 0.0

    @settings(max_examples=120, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_slacks_nonnegative_on_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        total = int(rng.integers(2, 31))
        kernel = rng.random((n, n)) + 1e-3
        kernel /= kernel.sum(axis=1, keepdims=True)
        prior = rng.multinomial(total, np.full(n, 1.0 / n))
        plan = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            if prior[i]:
                plan[i] = rng.multinomial(prior[i], kernel[i])
        report = proposition1_bounds(
            Marginal(prior), TransitionModel(kernel), TransferPlan(plan, time_index=1)
        )
        assert report.upper_slack >= 0.0
        assert report.lower_slack >= 0.0

    def test_rate_approximation_improves_with_scale(self):
        mbar = np.array([[0.2, 0.1, 0.1], [0.1, 0.2, 0.1], [0.1, 0.1, 0.0]])
        mubar = mbar.sum(axis=1)
        kernel = TransitionModel([[0.5, 0.3, 0.2], [0.25, 0.5, 0.25], [0.3, 0.3, 0.4]])
        rate = kl_divergence(mbar, mubar[:, None] * kernel.kernel)
        errors = []
        for total in (10, 100, 1000):
            loglik = log_transfer_likelihood(
                Marginal(total * mubar), kernel, TransferPlan(total * mbar, time_index=1)
            )
            errors.append(abs(loglik / total + rate))
        assert errors[0] > errors[1] > errors[2]

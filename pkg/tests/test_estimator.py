import dataclasses
import math

import numpy as np
import pytest

from ensemble_flow.core import (
    AggregateObservation,
    Marginal,
    ObservationModel,
    ProblemInstance,
    TransferPlan,
    TransitionModel,
    forward_propagate,
)
from ensemble_flow.errors import (
    ConvergenceError,
    DegenerateSupportError,
    PreconditionError,
)
from ensemble_flow.estimator import (
    estimate_flow,
    estimate_flow_multi,
    evaluate_primal_objective,
    sweep_cost_probe,
)
from ensemble_flow.bridge import solve_single_step
from ensemble_flow.oracle import generic_kl_solver

from conftest import random_instance, random_transition, simulated_instance


def identity_sensor_instance(rng, n, horizon, prior=None):
    """B = identity with prior-consistent exact observations."""
    transition = random_transition(rng, n)
    mu0 = Marginal(rng.random(n) + 0.5) if prior is None else prior
    marginals = forward_propagate(mu0, transition, horizon)
    observations = [
        [AggregateObservation(marginals[t + 1].mass, time_index=t + 1, sensor_index=0)]
        for t in range(horizon)
    ]
    return ProblemInstance(
        prior=mu0,
        transition=transition,
        sensors=[ObservationModel(np.eye(n))],
        observations=observations,
        horizon=horizon,
    )


def constraint_residual(instance, estimate):
    total = instance.prior.total()
    worst = 0.0
    prev = instance.prior.mass
    for t in range(instance.horizon):
        flow = estimate.transfer_plans[t].flow
        mu_t = estimate.marginals[t].mass
        worst = max(worst, np.abs(flow.sum(axis=1) - prev).max())
        worst = max(worst, np.abs(flow.sum(axis=0) - mu_t).max())
        for s in range(instance.n_sensors):
            assign = estimate.observation_plans[t][s].assignment
            worst = max(worst, np.abs(assign.sum(axis=1) - mu_t).max())
            worst = max(
                worst, np.abs(assign.sum(axis=0) - instance.observations[t][s].counts).max()
            )
        prev = mu_t
    return worst / total


class TestTrivialCases:
    def test_prior_consistent_identity_sensor(self):
        rng = np.random.default_rng(0)
        instance = identity_sensor_instance(rng, 4, 3)
        estimate = estimate_flow(instance, tol=1e-10)
        assert estimate.objective <= 1e-10
        marginals = forward_propagate(instance.prior, instance.transition, 3)
        for t in range(3):
            np.testing.assert_allclose(
                estimate.transfer_plans[t].flow,
                marginals[t].mass[:, None] * instance.transition.kernel,
                atol=1e-8,
            )
            np.testing.assert_allclose(
                estimate.observation_plans[t][0].assignment,
                np.diag(marginals[t + 1].mass),
                atol=1e-8,
            )
            np.testing.assert_allclose(
                estimate.marginals[t].mass, marginals[t + 1].mass, atol=1e-8
            )

    def test_single_step_identity_sensor_reduces_to_bridge(self):
        rng = np.random.default_rng(1)
        n = 4
        transition = random_transition(rng, n)
        mu0 = Marginal(rng.random(n) + 0.5)
        target = rng.random(n) + 0.2
        target *= mu0.total() / target.sum()
        instance = ProblemInstance(
            prior=mu0,
            transition=transition,
            sensors=[ObservationModel(np.eye(n))],
            observations=[[AggregateObservation(target, time_index=1, sensor_index=0)]],
            horizon=1,
        )
        estimate = estimate_flow(instance, tol=1e-12)
        bridge = solve_single_step(mu0, Marginal(target), transition, tol=1e-13)
        np.testing.assert_allclose(
            estimate.transfer_plans[0].flow, bridge.plans[0].flow, atol=1e-8
        )
        assert estimate.objective == pytest.approx(bridge.objective, abs=1e-8)


class TestOracleEquivalence:
    def test_three_state_simulated_instance(self):
        rng = np.random.default_rng(2)
        instance = simulated_instance(rng, 3, 2, 2, total=9)
        estimate = estimate_flow(instance, tol=1e-11)
        oracle = generic_kl_solver(instance)
        assert estimate.objective == pytest.approx(oracle.objective, rel=1e-6)

    def test_random_grid_with_marginals(self):
        rng = np.random.default_rng(3)
        for _ in range(6):
            n = int(rng.integers(2, 5))
            m = int(rng.integers(2, 4))
            horizon = int(rng.integers(1, 4))
            n_sensors = int(rng.integers(1, 3))
            instance = random_instance(rng, n, m, horizon, n_sensors, total=3.0)
            estimate = estimate_flow_multi(instance, tol=1e-11)
            oracle = generic_kl_solver(instance)
            scale = max(abs(oracle.objective), 1e-9)
            assert abs(estimate.objective - oracle.objective) <= 1e-6 * scale
            for t in range(horizon):
                gap = np.abs(
                    estimate.marginals[t].mass - oracle.argmin["marginals"][t]
                ).max()
                assert gap <= 1e-5

    def test_duplicated_sensor_matches_oracle(self):
        rng = np.random.default_rng(4)
        base = random_instance(rng, 3, 3, 2, n_sensors=1, total=4.0)
        sensor = base.sensors[0]
        observations = [
            [
                AggregateObservation(row[0].counts, time_index=t + 1, sensor_index=0),
                AggregateObservation(row[0].counts, time_index=t + 1, sensor_index=1),
            ]
            for t, row in enumerate(base.observations)
        ]
        doubled = ProblemInstance(
            prior=base.prior,
            transition=base.transition,
            sensors=[sensor, sensor],
            observations=observations,
            horizon=base.horizon,
        )
        estimate = estimate_flow_multi(doubled, tol=1e-11)
        oracle = generic_kl_solver(doubled)
        assert estimate.objective == pytest.approx(oracle.objective, rel=1e-6)
        for t in range(doubled.horizon):
            gap = np.abs(estimate.marginals[t].mass - oracle.argmin["marginals"][t]).max()
            assert gap <= 1e-5
            # duplicated sensors share the optimal observation plan
            np.testing.assert_allclose(
                estimate.observation_plans[t][0].assignment,
                estimate.observation_plans[t][1].assignment,
                atol=1e-8,
            )


class TestIterationContracts:
    def test_single_sensor_guard(self):
        rng = np.random.default_rng(5)
        instance = random_instance(rng, 3, 2, 2, n_sensors=2)
        with pytest.raises(PreconditionError):
            estimate_flow(instance)

    def test_multi_equals_single_for_one_sensor(self):
        rng = np.random.default_rng(6)
        instance = random_instance(rng, 3, 2, 3)
        a = estimate_flow(instance, tol=1e-11)
        b = estimate_flow_multi(instance, tol=1e-11)
        for t in range(instance.horizon):
            np.testing.assert_allclose(
                a.marginals[t].mass, b.marginals[t].mass, atol=1e-8
            )

    def test_invalid_instance_rejected(self):
        rng = np.random.default_rng(7)
        instance = random_instance(rng, 3, 2, 2)
        counts = instance.observations[0][0].counts * 2.0
        bad = ProblemInstance(
            prior=instance.prior,
            transition=instance.transition,
            sensors=instance.sensors,
            observations=[
                [AggregateObservation(counts, time_index=1, sensor_index=0)],
                instance.observations[1],
            ],
            horizon=2,
        )
        with pytest.raises(PreconditionError):
            estimate_flow(bad)

    def test_dual_trace_nondecreasing_per_block_update(self):
        rng = np.random.default_rng(8)
        instance = random_instance(rng, 3, 2, 2, n_sensors=2, total=5.0)
        values = []
        estimate_flow_multi(instance, tol=1e-10, on_update=values.append)
        values = np.asarray(values)
        assert len(values) > 10
        drops = np.diff(values)
        assert np.all(drops >= -1e-10 * (1.0 + np.abs(values[:-1])))

    def test_sweep_trace_nondecreasing(self):
        rng = np.random.default_rng(9)
        instance = random_instance(rng, 4, 3, 3, total=7.0)
        estimate = estimate_flow(instance, tol=1e-11)
        trace = np.asarray(estimate.dual_objective_trace)
        assert np.all(np.diff(trace) >= -1e-10 * (1.0 + np.abs(trace[:-1])))

    def test_mass_conservation(self):
        rng = np.random.default_rng(10)
        tol = 1e-10
        instance = random_instance(rng, 5, 3, 4, total=11.0)
        estimate = estimate_flow(instance, tol=tol)
        for marginal in estimate.marginals:
            assert abs(marginal.total() - 11.0) <= 10 * tol * 11.0

    def test_all_constraint_families_within_residual(self):
        rng = np.random.default_rng(11)
        instance = random_instance(rng, 4, 2, 3, n_sensors=2, total=6.0)
        estimate = estimate_flow_multi(instance, tol=1e-10)
        assert constraint_residual(instance, estimate) <= estimate.residual + 1e-15
        assert estimate.residual <= 1e-10

    def test_initialization_robustness(self):
        rng = np.random.default_rng(12)
        tol = 1e-11
        instance = random_instance(rng, 3, 3, 3, total=5.0)
        base = estimate_flow(instance, tol=tol)
        v0 = [
            [rng.random(3) + 0.3 for _ in range(1)]
            for _ in range(instance.horizon)
        ]
        other = estimate_flow(instance, tol=tol, v0=v0)
        for t in range(instance.horizon):
            gap = np.abs(base.marginals[t].mass - other.marginals[t].mass).max()
            assert gap <= 10 * tol * instance.prior.total()

    def test_dual_state_positive_and_consistent(self):
        rng = np.random.default_rng(13)
        instance = random_instance(rng, 3, 2, 3, total=4.0)
        estimate = estimate_flow(instance, tol=1e-10)
        dual = estimate.dual
        assert np.all(dual.u1 > 0)
        assert np.isfinite(dual.u1_log_scale)
        for t in range(instance.horizon):
            assert np.all(dual.w[t] > 0)
            assert np.all(dual.y[t] > 0)
            assert np.all(dual.v[t][0] > 0)
            assert np.isfinite(dual.v_log_scales[t, 0])
        # w cache agrees with a fresh backward recursion from v
        b = instance.sensors[0].kernel
        a = instance.transition.kernel
        w_true = [None] * instance.horizon
        w_true[-1] = b @ dual.v_value(instance.horizon - 1)
        for t in range(instance.horizon - 2, -1, -1):
            w_true[t] = (b @ dual.v_value(t)) * (a @ w_true[t + 1])
        for t in range(instance.horizon):
            np.testing.assert_allclose(
                dual.w_value(t) / dual.w_value(t).max(),
                w_true[t] / w_true[t].max(),
                rtol=1e-9,
            )

    def test_scaled_and_plain_engines_agree(self):
        rng = np.random.default_rng(14)
        instance = random_instance(rng, 4, 3, 3, n_sensors=2, total=6.0)
        fast = estimate_flow_multi(instance, tol=1e-11, log_domain="auto")
        plain = estimate_flow_multi(instance, tol=1e-11, log_domain="off")
        assert fast.sweeps == plain.sweeps
        assert fast.objective == pytest.approx(plain.objective, rel=1e-9)
        for t in range(instance.horizon):
            np.testing.assert_allclose(
                fast.marginals[t].mass, plain.marginals[t].mass, atol=1e-9
            )

    def test_long_horizon_runs_in_scaled_mode(self):
        rng = np.random.default_rng(15)
        instance = random_instance(rng, 3, 2, 50, total=1000.0)
        estimate = estimate_flow(instance, tol=1e-9, max_sweeps=50000)
        assert estimate.residual <= 1e-9
        assert np.isfinite(estimate.objective)

    def test_non_convergence_error(self):
        rng = np.random.default_rng(16)
        instance = random_instance(rng, 4, 3, 3, total=8.0)
        with pytest.raises(ConvergenceError) as excinfo:
            estimate_flow(instance, tol=1e-13, max_sweeps=2)
        assert excinfo.value.residual is not None
        assert len(excinfo.value.trace) >= 1

    def test_degenerate_support_error_names_location(self):
        # symbol 0 is emitted by nobody but observed with positive count
        sensor = ObservationModel([[0.0, 1.0], [0.0, 1.0]])
        instance = ProblemInstance(
            prior=Marginal([1.0, 1.0]),
            transition=TransitionModel([[0.6, 0.4], [0.3, 0.7]]),
            sensors=[sensor],
            observations=[[AggregateObservation([1.0, 1.0], time_index=1, sensor_index=0)]],
            horizon=1,
        )
        with pytest.raises(DegenerateSupportError) as excinfo:
            estimate_flow(instance, tol=1e-9)
        assert excinfo.value.time_index == 1
        assert excinfo.value.index == 0

    def test_zero_marginal_states_reported(self):
        instance = ProblemInstance(
            prior=Marginal([3.0, 0.0]),
            transition=TransitionModel(np.eye(2)),
            sensors=[ObservationModel(np.eye(2))],
            observations=[[AggregateObservation([3.0, 0.0], time_index=1, sensor_index=0)]],
            horizon=1,
        )
        estimate = estimate_flow(instance, tol=1e-10)
        assert (1, 1) in estimate.zero_marginal_states()


class TestPrimalObjective:
    def test_zero_on_trivial_instance(self):
        rng = np.random.default_rng(17)
        instance = identity_sensor_instance(rng, 3, 2)
        estimate = estimate_flow(instance, tol=1e-11)
        assert evaluate_primal_objective(estimate, instance) <= 1e-10

    def test_matches_stored_objective(self):
        rng = np.random.default_rng(18)
        instance = random_instance(rng, 4, 2, 3, total=5.0)
        estimate = estimate_flow(instance, tol=1e-10)
        assert evaluate_primal_objective(estimate, instance) == pytest.approx(
            estimate.objective, rel=1e-12
        )

    def test_requires_feasibility(self):
        rng = np.random.default_rng(19)
        instance = random_instance(rng, 3, 2, 2, total=5.0)
        estimate = estimate_flow(instance, tol=1e-10)
        broken = dataclasses.replace(estimate, residual=1e-3)
        with pytest.raises(PreconditionError):
            evaluate_primal_objective(broken, instance)

    def test_feasible_perturbations_increase_objective(self):
        rng = np.random.default_rng(20)
        instance = random_instance(rng, 3, 3, 2, total=5.0)
        estimate = estimate_flow(instance, tol=1e-12)
        base = evaluate_primal_objective(estimate, instance)
        for trial in range(5):
            plans = list(estimate.transfer_plans)
            flow = plans[0].flow.copy()
            # add a cycle: keeps all row and column sums
            i, k = rng.choice(3, size=2, replace=False)
            j, l = rng.choice(3, size=2, replace=False)
            eps = 0.05 * min(flow[i, l], flow[k, j])
            assert eps > 0
            flow[i, j] += eps
            flow[k, l] += eps
            flow[i, l] -= eps
            flow[k, j] -= eps
            plans[0] = TransferPlan(flow, time_index=1)
            perturbed = dataclasses.replace(estimate, transfer_plans=tuple(plans))
            assert evaluate_primal_objective(perturbed, instance) > base + 1e-12


class TestSweepCostProbe:
    def test_single_state_smoke(self):
        rows = sweep_cost_probe(n_values=(1,), m=2, t_values=(3,), repeats=2)
        assert rows[0]["n"] == 1
        assert rows[0]["median_sweep_seconds"] > 0.0

    def test_rows_and_ops_model(self):
        rows = sweep_cost_probe(n_values=(4, 8), m=2, t_values=(2, 4), repeats=2)
        assert [(r["n"], r["horizon"]) for r in rows] == [(4, 2), (4, 4), (8, 2), (8, 4)]
        for row in rows:
            assert row["ops_model"] == row["horizon"] * row["n"] * max(row["n"], 2)

"""Shared generators for randomized tests.

Everything is seeded: a test that passes once passes forever.
"""

import numpy as np
import pytest

from ensemble_flow.core import (
    AggregateObservation,
    Marginal,
    ObservationModel,
    ProblemInstance,
    TransitionModel,
)


def random_stochastic(rng, rows, cols, floor=0.05):
    kernel = rng.random((rows, cols)) + floor
    return kernel / kernel.sum(axis=1, keepdims=True)


def random_transition(rng, n, floor=0.05):
    return TransitionModel(random_stochastic(rng, n, n, floor))


def random_sensor(rng, n, m, floor=0.05):
    return ObservationModel(random_stochastic(rng, n, m, floor))


def integer_prior(rng, n, total):
    """Random nonnegative integer vector with the given total."""
    return Marginal(rng.multinomial(total, np.full(n, 1.0 / n)))


def random_instance(rng, n, m, horizon, n_sensors=1, total=None):
    """Strictly positive random instance with mass-consistent observations.

    Observations are drawn as random positive vectors rescaled to the
    ensemble mass, which is always feasible for strictly positive kernels.
    """
    if total is None:
        total = float(rng.integers(2, 9))
    prior = rng.random(n) + 0.2
    prior = prior / prior.sum() * total
    sensors = [random_sensor(rng, n, m) for _ in range(n_sensors)]
    observations = []
    for t in range(horizon):
        row = []
        for s in range(n_sensors):
            counts = rng.random(m) + 0.2
            counts = counts / counts.sum() * total
            row.append(AggregateObservation(counts, time_index=t + 1, sensor_index=s))
        observations.append(row)
    return ProblemInstance(
        prior=Marginal(prior),
        transition=random_transition(rng, n),
        sensors=sensors,
        observations=observations,
        horizon=horizon,
    )


def simulated_instance(rng, n, m, horizon, n_sensors=1, total=12):
    """Instance whose observations come from an actual simulation run."""
    from ensemble_flow.simulate import simulate

    prior = integer_prior(rng, n, total)
    transition = random_transition(rng, n)
    sensors = [random_sensor(rng, n, m) for _ in range(n_sensors)]
    trajectory = simulate(prior, transition, sensors, horizon, int(rng.integers(0, 2**31)))
    return trajectory.to_problem_instance(transition, sensors)


@pytest.fixture(scope="session")
def warm_kernel():
    """Compile the numba sweep kernel once, outside any timed block."""
    rng = np.random.default_rng(0)
    from ensemble_flow.estimator import estimate_flow

    estimate_flow(random_instance(rng, 2, 2, 1), tol=1e-6, max_sweeps=50)
    return True

"""Forward stochastic simulation of finite agent ensembles, plus the
model constructors used by the bundled experiments.

Randomness comes from numpy's Philox generator, a counter-based bit
generator with an explicit 64-bit seed; multinomial rows are drawn with
numpy's sequential conditional-binomial sampler.  Given a seed, a
trajectory is a pure function of the model, so simulated fixtures are
reproducible byte for byte.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import (
    AggregateObservation,
    Marginal,
    ObservationModel,
    ObservationPlan,
    ProblemInstance,
    TransferPlan,
    TransitionModel,
    ROW_SUM_TOL,
)
from .errors import NetworkModelError, PreconditionError


@dataclass(frozen=True)
class Trajectory:
    """One realized evolution of an integer ensemble.

    ``marginals`` holds mu_0..mu_T; all plans and observations are
    integer-valued and satisfy the coupling constraints exactly.
    """

    marginals: tuple
    transfer_plans: tuple
    observation_plans: tuple
    aggregate_observations: tuple
    seed: int

    @property
    def horizon(self):
        return len(self.transfer_plans)

    @property
    def n_sensors(self):
        return len(self.aggregate_observations[0]) if self.aggregate_observations else 0

    def marginal_array(self):
        """Hidden marginals stacked as a (T+1, n) array."""
        return np.array([m.mass for m in self.marginals])

    def observation_array(self, sensor_index=0):
        """Counts of one sensor stacked as a (T, m) array."""
        return np.array(
            [self.aggregate_observations[t][sensor_index].counts for t in range(self.horizon)]
        )

    def to_problem_instance(self, transition, sensors, prior=None):
        """Estimation instance fed by this trajectory's observations.

        ``transition`` and ``sensors`` may differ from the simulation
        models (that is the point: estimate under a mismatched model);
        ``prior`` defaults to the true initial marginal.
        """
        return ProblemInstance(
            prior=self.marginals[0] if prior is None else prior,
            transition=transition,
            sensors=tuple(sensors),
            observations=self.aggregate_observations,
            horizon=self.horizon,
        )


def _check_stochastic(kernel, name):
    if np.any(kernel < 0.0) or np.any(np.abs(kernel.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise PreconditionError(f"{name} must be row-stochastic")


def simulate(prior, transition, sensors, horizon, seed):
    """Sample one trajectory of the ensemble.

    Each state's outgoing row of the transfer plan is a multinomial draw
    over the transition row, and each sensor's observation plan rows are
    multinomial draws over the emission rows; aggregate observations are
    the column sums.  Deterministic given ``seed``.

    Parameters
    ----------
    prior : Marginal
        Integer-valued initial distribution.
    transition : TransitionModel
    sensors : sequence of ObservationModel
    horizon : int
        Number of steps T >= 1.
    seed : int
        64-bit seed of the Philox counter-based generator.
    """
    mu = np.rint(prior.mass).astype(np.int64)
    if np.any(np.abs(prior.mass - mu) > 1e-9) or np.any(mu < 0):
        raise PreconditionError("simulate requires a nonnegative integer prior")
    if horizon < 1:
        raise PreconditionError("horizon must be >= 1")
    a = transition.kernel
    _check_stochastic(a, "transition kernel")
    b_kernels = [s.kernel for s in sensors]
    for s, b in enumerate(b_kernels):
        _check_stochastic(b, f"sensor {s} kernel")
        if b.shape[0] != a.shape[0]:
            raise PreconditionError(f"sensor {s} kernel has {b.shape[0]} rows, expected {a.shape[0]}")

    rng = np.random.Generator(np.random.Philox(seed))
    n = a.shape[0]
    marginals = [Marginal(mu)]
    plans = []
    obs_plans = []
    observations = []
    for t in range(1, horizon + 1):
        flow = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            if mu[i] > 0:
                flow[i] = rng.multinomial(mu[i], a[i] / a[i].sum())
        mu = flow.sum(axis=0)
        marginals.append(Marginal(mu))
        plans.append(TransferPlan(flow, time_index=t))
        row_plans = []
        row_obs = []
        for s, b in enumerate(b_kernels):
            assign = np.zeros((n, b.shape[1]), dtype=np.int64)
            for i in range(n):
                if mu[i] > 0:
                    assign[i] = rng.multinomial(mu[i], b[i] / b[i].sum())
            row_plans.append(ObservationPlan(assign, time_index=t, sensor_index=s))
            row_obs.append(AggregateObservation(assign.sum(axis=0), time_index=t, sensor_index=s))
        obs_plans.append(tuple(row_plans))
        observations.append(tuple(row_obs))
    return Trajectory(
        marginals=tuple(marginals),
        transfer_plans=tuple(plans),
        observation_plans=tuple(obs_plans),
        aggregate_observations=tuple(observations),
        seed=int(seed),
    )


def build_gaussian_chain(n, sigma, drift):
    """Transition kernel from a discretized normal step distribution.

    With states indexed 1..n, row i is proportional to
    exp(-(j - i - drift)^2 / (2 sigma^2)) and normalized, i.e. the step
    j - i is a discretized N(drift, sigma) truncated at the boundary.
    """
    if n < 1 or sigma <= 0.0:
        raise PreconditionError("need n >= 1 and sigma > 0")
    idx = np.arange(1, n + 1, dtype=np.float64)
    step = idx[None, :] - idx[:, None] - drift
    kernel = np.exp(-(step**2) / (2.0 * sigma * sigma))
    return TransitionModel(kernel / kernel.sum(axis=1, keepdims=True))


def build_binned_observation(n, m, sigma_b):
    """Emission kernel binning n states into m symbols with Gaussian blur.

    States map linearly onto bins: state i (1-based) is centered at bin
    coordinate m*i/n + 1/2, and row i is proportional to
    exp(-(j - center_i)^2 / (2 sigma_b^2)) over bins j = 1..m.  With
    n = 100 and m = 5 the center is (i + 10) / 20.
    """
    if n < 1 or m < 1 or sigma_b <= 0.0:
        raise PreconditionError("need n, m >= 1 and sigma_b > 0")
    centers = m * np.arange(1, n + 1, dtype=np.float64) / n + 0.5
    bins = np.arange(1, m + 1, dtype=np.float64)
    kernel = np.exp(-((bins[None, :] - centers[:, None]) ** 2) / (2.0 * sigma_b * sigma_b))
    return ObservationModel(kernel / kernel.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class NetworkModel:
    """Directed walking network whose edges are the hidden states.

    ``node_positions[k]`` is the planar position of node k+1 (node ids
    are 1-based); ``edges[i]`` is the directed edge (v_in, v_out) of
    hidden state i; ``preferred_edges`` is the set of edges favored by
    the true dynamics; ``sensor_positions`` are the planar sensor sites.
    """

    node_positions: tuple
    edges: tuple
    preferred_edges: frozenset
    sensor_positions: tuple

    def __post_init__(self):
        object.__setattr__(self, "node_positions", tuple(tuple(map(float, p)) for p in self.node_positions))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        object.__setattr__(self, "preferred_edges", frozenset((int(a), int(b)) for a, b in self.preferred_edges))
        object.__setattr__(self, "sensor_positions", tuple(tuple(map(float, p)) for p in self.sensor_positions))
        n_nodes = len(self.node_positions)
        for a, b in self.edges:
            if not (1 <= a <= n_nodes and 1 <= b <= n_nodes):
                raise NetworkModelError(f"edge ({a}, {b}) references a missing node")
        for e in self.preferred_edges:
            if e not in set(self.edges):
                raise NetworkModelError(f"preferred edge {e} is not in the edge list")

    @property
    def n_states(self):
        return len(self.edges)

    @property
    def n_sensors(self):
        return len(self.sensor_positions)

    def edge_index(self, edge):
        return self.edges.index((int(edge[0]), int(edge[1])))

    def midpoint(self, state):
        a, b = self.edges[state]
        pa = self.node_positions[a - 1]
        pb = self.node_positions[b - 1]
        return ((pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0)

    def successors(self, state):
        """Indices of edges that start where edge ``state`` ends."""
        out_node = self.edges[state][1]
        return [j for j, (a, _b) in enumerate(self.edges) if a == out_node]


def build_network_transitions(model, weight_mode):
    """Transition kernel of agents walking on a network.

    Every edge keeps the agent with probability 0.5 (a stay-or-move time
    discretization); the remaining 0.5 is split over successor edges in
    proportion to weights.  ``weight_mode="uniform"`` gives every
    successor weight 1 (including the reverse edge).  ``"weighted"``
    gives preferred edges weight 20, forbids U-turns (weight 0) and
    leaves weight 1 elsewhere.

    Raises :class:`NetworkModelError` when some edge has no successor of
    positive weight, since its residual 0.5 has nowhere to go.
    """
    if weight_mode not in ("uniform", "weighted"):
        raise PreconditionError("weight_mode must be 'uniform' or 'weighted'")
    n = model.n_states
    kernel = np.zeros((n, n))
    for i in range(n):
        v_in, v_out = model.edges[i]
        weights = {}
        for j in model.successors(i):
            edge_j = model.edges[j]
            if weight_mode == "uniform":
                weights[j] = 1.0
            elif edge_j[1] == v_in:
                weights[j] = 0.0
            elif edge_j in model.preferred_edges:
                weights[j] = 20.0
            else:
                weights[j] = 1.0
        total = sum(weights.values())
        if total <= 0.0:
            raise NetworkModelError(
                f"edge {model.edges[i]} has no admissible successor; its residual probability is stranded"
            )
        kernel[i, i] = 0.5
        for j, w in weights.items():
            kernel[i, j] += 0.5 * w / total
    return TransitionModel(kernel)


def build_sensor_models(model):
    """Detect/not-detect emission kernels for every sensor.

    The detection probability of an agent on edge i by a sensor at
    distance d from the edge midpoint is min(0.99, 2 exp(-5 d)); column 0
    is "detected", column 1 is "not detected".
    """
    out = []
    midpoints = np.array([model.midpoint(i) for i in range(model.n_states)])
    for sx, sy in model.sensor_positions:
        d = np.hypot(midpoints[:, 0] - sx, midpoints[:, 1] - sy)
        detect = np.minimum(0.99, 2.0 * np.exp(-5.0 * d))
        out.append(ObservationModel(np.column_stack([detect, 1.0 - detect])))
    return out


def build_reference_network():
    """The committed 11-node / 28-edge / 7-sensor network fixture.

    The published experiment fixes only the counts (11 nodes, 28 directed
    edges, 7 sensors) and the rules of the dynamics; the geometry here is
    this package's canonical layout, shipped as ``data/reference_network.json``.
    """
    payload = resources.files("ensemble_flow").joinpath("data/reference_network.json").read_text()
    doc = json.loads(payload)
    return NetworkModel(
        node_positions=doc["nodes"],
        edges=doc["edges"],
        preferred_edges=doc["preferred_edges"],
        sensor_positions=doc["sensors"],
    )


def network_initial_marginal(model, edge=(1, 3), count=100):
    """All ``count`` agents on one edge (the experiment's initial state)."""
    mass = np.zeros(model.n_states)
    mass[model.edge_index(edge)] = float(count)
    return Marginal(mass)

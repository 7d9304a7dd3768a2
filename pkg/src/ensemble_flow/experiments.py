"""Configuration-driven experiment runners.

Two bundled experiments mirror the package's reference scenarios: a
drifting particle cloud observed through coarse bins and estimated under
a deliberately mismatched transition model, and an ensemble of agents
walking a street network watched by proximity sensors and estimated with
uniform path preferences.  Both write CSV grids, SVG renderings and a
JSON summary into an output directory; every artifact is a deterministic
function of (config, seed).
"""

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from .core import Marginal, forward_propagate
from .errors import PreconditionError, SchemaError
from .estimator import estimate_flow, estimate_flow_multi
from .simulate import (
    build_binned_observation,
    build_gaussian_chain,
    build_network_transitions,
    build_reference_network,
    build_sensor_models,
    network_initial_marginal,
    simulate,
)
from .svgplot import heatmap_svg, network_svg

# Mean truth-vs-estimate total-variation distance of the network
# experiment on the committed fixture, measured at fixture creation over
# seeds 0..4 with default parameters.  Regression anchor for acceptance.
NETWORK_TV_REFERENCE = 0.35849
NETWORK_TV_SEEDS = (0, 1, 2, 3, 4)

_KINDS = ("particle_cloud", "network", "custom")


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of the bundled experiments, defaulting to the reference values."""

    kind: str = "particle_cloud"
    n: int = 100
    m: int = 5
    horizon: int = 50
    n_particles: int = 1000
    n_sensors: int = 1
    sigma_true: float = 0.5
    drift_true: float = 1.0
    sigma_model: float = 2.0
    drift_model: float = 0.0
    sigma_obs: float = 0.5
    seed: int = 0
    tolerance: float = 1e-8
    max_sweeps: int = 100000
    prior_mode: str = "true"
    out_dir: str = "."

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise PreconditionError(f"kind must be one of {_KINDS}")
        if self.prior_mode not in ("true", "uniform"):
            raise PreconditionError("prior_mode must be 'true' or 'uniform'")
        if min(self.n, self.m, self.horizon, self.n_particles, self.n_sensors) < 1:
            raise PreconditionError("n, m, horizon, n_particles and n_sensors must be >= 1")
        if self.tolerance <= 0 or self.max_sweeps < 1:
            raise PreconditionError("tolerance must be positive and max_sweeps >= 1")

    @classmethod
    def network_defaults(cls, **overrides):
        base = dict(kind="network", n=28, m=2, horizon=20, n_particles=100, n_sensors=7)
        base.update(overrides)
        return cls(**base)

    def to_jsonable(self):
        doc = {"type": "experiment_config"}
        doc.update(dataclasses.asdict(self))
        return doc

    @classmethod
    def from_jsonable(cls, doc, path="$"):
        if not isinstance(doc, dict) or doc.get("type") != "experiment_config":
            raise SchemaError("expected an experiment_config document", path=path)
        kind = doc.get("kind", "particle_cloud")
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - fields - {"type", "schema", "comment"}
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}", path=path)
        kwargs = {k: v for k, v in doc.items() if k in fields}
        try:
            if kind == "network":
                return cls.network_defaults(**kwargs)
            return cls(**kwargs)
        except (TypeError, PreconditionError) as exc:
            raise SchemaError(str(exc), path=path) from None


def write_csv(path, grid):
    """Write a 2-d array as bare CSV with full-precision deterministic floats."""
    grid = np.asarray(grid, dtype=np.float64)
    with open(path, "w") as handle:
        for row in grid:
            handle.write(",".join(repr(float(x)) for x in row))
            handle.write("\n")


def l1_distance(p, q):
    return float(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)).sum())


def tv_distance(p, q):
    """Total-variation distance between two equal-mass count vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    total = p.sum()
    return 0.5 * l1_distance(p, q) / total


def particle_cloud_prior(n, n_particles):
    """Committed initial distribution: a Gaussian bump over low-index states.

    Centered at state n/5 with spread n/20 (state 20, sigma 5 at the
    default n = 100), rounded to integers by largest remainder so the
    total is exactly ``n_particles``.  This is a package choice, made
    because the reference scenario does not pin the initial shape down.
    """
    idx = np.arange(1, n + 1, dtype=np.float64)
    center = n / 5.0
    spread = max(n / 20.0, 1.0)
    weights = np.exp(-((idx - center) ** 2) / (2.0 * spread * spread))
    target = weights / weights.sum() * n_particles
    floored = np.floor(target)
    shortfall = int(round(n_particles - floored.sum()))
    order = np.argsort(-(target - floored), kind="stable")
    floored[order[:shortfall]] += 1.0
    return Marginal(floored)


def _marginal_grid(prior, estimate):
    return np.vstack([prior.mass] + [m.mass for m in estimate.marginals])


def run_particle_cloud(config, out_dir=None):
    """Simulate the drifting-cloud scenario and estimate it twice.

    The truth moves with a drift-1 narrow Gaussian kernel; the estimates
    use a drift-0 wide kernel, once from the true initial distribution
    and once from a uniform one.  Writes four CSV heatmap grids (truth,
    observations, both estimates), one SVG per grid, and summary.json.

    Returns a dict with the artifact paths and the computed metrics.
    """
    out = out_dir if out_dir is not None else config.out_dir
    os.makedirs(out, exist_ok=True)
    n, m, horizon, total = config.n, config.m, config.horizon, config.n_particles

    true_transition = build_gaussian_chain(n, config.sigma_true, config.drift_true)
    sensor = build_binned_observation(n, m, config.sigma_obs)
    prior = particle_cloud_prior(n, total)
    trajectory = simulate(prior, true_transition, [sensor], horizon, config.seed)

    model_transition = build_gaussian_chain(n, config.sigma_model, config.drift_model)
    uniform_prior = Marginal(np.full(n, total / n))

    est_true = estimate_flow(
        trajectory.to_problem_instance(model_transition, [sensor]),
        tol=config.tolerance, max_sweeps=config.max_sweeps,
    )
    est_uniform = estimate_flow(
        trajectory.to_problem_instance(model_transition, [sensor], prior=uniform_prior),
        tol=config.tolerance, max_sweeps=config.max_sweeps,
    )

    truth_grid = trajectory.marginal_array()
    obs_grid = trajectory.observation_array()
    grid_true = _marginal_grid(prior, est_true)
    grid_uniform = _marginal_grid(uniform_prior, est_uniform)
    forward = np.vstack([mm.mass for mm in forward_propagate(prior, model_transition, horizon)])

    paths = {}
    grids = {
        "truth": truth_grid,
        "observations": obs_grid,
        "estimate_true_prior": grid_true,
        "estimate_uniform_prior": grid_uniform,
    }
    for name, grid in grids.items():
        csv_path = os.path.join(out, f"{name}.csv")
        write_csv(csv_path, grid)
        svg_path = os.path.join(out, f"{name}.svg")
        with open(svg_path, "w") as handle:
            handle.write(heatmap_svg(grid, title=name))
        paths[name + "_csv"] = csv_path
        paths[name + "_svg"] = svg_path

    prior_gap = [
        l1_distance(grid_uniform[t], grid_true[t]) / total for t in range(horizon + 1)
    ]
    err_estimate = [l1_distance(grid_true[t], truth_grid[t]) / total for t in range(horizon + 1)]
    err_forward = [l1_distance(forward[t], truth_grid[t]) / total for t in range(horizon + 1)]
    summary = {
        "config": config.to_jsonable(),
        "objective_true_prior": est_true.objective,
        "objective_uniform_prior": est_uniform.objective,
        "residual_true_prior": est_true.residual,
        "residual_uniform_prior": est_uniform.residual,
        "sweeps_true_prior": est_true.sweeps,
        "sweeps_uniform_prior": est_uniform.sweeps,
        "rel_l1_uniform_vs_true_prior": prior_gap,
        "rel_l1_true_prior_vs_truth": err_estimate,
        "rel_l1_forward_vs_truth": err_forward,
    }
    summary_path = os.path.join(out, "summary.json")
    with open(summary_path, "w") as handle:
        json.dump(summary, handle, sort_keys=True, indent=2)
        handle.write("\n")
    paths["summary"] = summary_path
    return {
        "paths": paths,
        "estimates": {"true": est_true, "uniform": est_uniform},
        "trajectory": trajectory,
        "metrics": summary,
    }


def run_network(config, out_dir=None):
    """Simulate and estimate the street-network tracking scenario.

    Truth walks with preferred-path weights; the estimate assumes
    uniform weights but knows the sensor geometry.  Writes per-time
    per-edge truth and estimate CSV grids, per-sensor observation CSVs,
    network SVGs at a few time steps, and summary.json with the per-step
    total-variation distances.
    """
    out = out_dir if out_dir is not None else config.out_dir
    os.makedirs(out, exist_ok=True)
    model = build_reference_network()
    horizon, total = config.horizon, config.n_particles
    true_transition = build_network_transitions(model, "weighted")
    est_transition = build_network_transitions(model, "uniform")
    sensors = build_sensor_models(model)
    prior = network_initial_marginal(model, edge=(1, 3), count=total)
    trajectory = simulate(prior, true_transition, sensors, horizon, config.seed)

    estimate = estimate_flow_multi(
        trajectory.to_problem_instance(est_transition, sensors),
        tol=config.tolerance, max_sweeps=config.max_sweeps,
    )

    truth_grid = trajectory.marginal_array()
    est_grid = _marginal_grid(prior, estimate)
    paths = {}
    write_csv(os.path.join(out, "truth.csv"), truth_grid)
    write_csv(os.path.join(out, "estimate.csv"), est_grid)
    paths["truth_csv"] = os.path.join(out, "truth.csv")
    paths["estimate_csv"] = os.path.join(out, "estimate.csv")
    for s in range(len(sensors)):
        p = os.path.join(out, f"observations_sensor{s}.csv")
        write_csv(p, trajectory.observation_array(s))
        paths[f"observations_sensor{s}_csv"] = p

    snapshot_times = sorted({0, horizon // 4, horizon // 2, horizon})
    for t in snapshot_times:
        for label, grid in (("truth", truth_grid), ("estimate", est_grid)):
            p = os.path.join(out, f"network_{label}_t{t:02d}.svg")
            with open(p, "w") as handle:
                handle.write(network_svg(model, grid[t], title=f"{label} t={t}"))
            paths[f"network_{label}_t{t:02d}_svg"] = p

    tv = [tv_distance(truth_grid[t], est_grid[t]) for t in range(1, horizon + 1)]
    summary = {
        "config": config.to_jsonable(),
        "objective": estimate.objective,
        "residual": estimate.residual,
        "sweeps": estimate.sweeps,
        "tv_per_step": tv,
        "mean_tv": float(np.mean(tv)),
        "tv_reference": NETWORK_TV_REFERENCE,
    }
    summary_path = os.path.join(out, "summary.json")
    with open(summary_path, "w") as handle:
        json.dump(summary, handle, sort_keys=True, indent=2)
        handle.write("\n")
    paths["summary"] = summary_path
    return {
        "paths": paths,
        "estimate": estimate,
        "trajectory": trajectory,
        "metrics": summary,
        "model": model,
    }

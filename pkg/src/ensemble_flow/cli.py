"""Command-line front end.

Subcommands map one-to-one onto the library surface:

    simulate    sample a trajectory from a model JSON
    estimate    run the flow estimator on a problem-instance JSON
    bridge      solve an endpoint-constrained chain problem
    oracle      solve the same inputs with the slow reference solver
    likelihood  exact transfer-plan likelihood and its rate bounds
    probe       per-sweep timing table across an (n, T) grid
    experiment  run a bundled experiment from a config JSON

Every command writes JSON/CSV (and SVG, for experiments) artifacts into
--out and exits 0, or prints a machine-readable error JSON to stdout and
exits nonzero (2 for malformed input, 1 for everything else).  All data
outputs are deterministic functions of (input, seed); the probe timing
column is measured wall time and is exempt.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import serialize
from .bridge import BridgeProblem, solve_chain
from .core import TransferPlan
from .divergence import proposition1_bounds
from .errors import EnsembleFlowError, SchemaError
from .estimator import estimate_flow_multi, sweep_cost_probe
from .experiments import ExperimentConfig, run_network, run_particle_cloud, write_csv
from .oracle import generic_kl_solver
from .simulate import simulate


def _load_document(path):
    try:
        with open(path) as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise SchemaError("file not found", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}", path=str(path)) from None


def _decode_field(doc, key, path):
    if key not in doc:
        raise SchemaError(f"missing required key '{key}'", path=path)
    return serialize.from_jsonable(doc[key], f"{path}.{key}")


def _write_json_doc(doc, path):
    with open(path, "w") as handle:
        json.dump({"schema": serialize.SCHEMA_VERSION, **doc}, handle, sort_keys=True, indent=2)
        handle.write("\n")


def _write_result(obj, path):
    serialize.write_json(obj, path)


def _cmd_simulate(args):
    doc = _load_document(args.input)
    if doc.get("type") != "simulation_input":
        raise SchemaError("expected a simulation_input document", path="$")
    prior = _decode_field(doc, "prior", "$")
    transition = _decode_field(doc, "transition", "$")
    sensors = [
        serialize.from_jsonable(s, f"$.sensors[{i}]") for i, s in enumerate(doc.get("sensors", []))
    ]
    if "horizon" not in doc:
        raise SchemaError("missing required key 'horizon'", path="$")
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    trajectory = simulate(prior, transition, sensors, int(doc["horizon"]), seed)
    os.makedirs(args.out, exist_ok=True)
    _write_result(trajectory, os.path.join(args.out, "trajectory.json"))
    # ready-made estimation input (estimate under the simulation model;
    # swap the kernels in the JSON to estimate under a mismatched one)
    _write_result(
        trajectory.to_problem_instance(transition, sensors),
        os.path.join(args.out, "instance.json"),
    )
    for s in range(trajectory.n_sensors):
        write_csv(os.path.join(args.out, f"observations_sensor{s}.csv"), trajectory.observation_array(s))
    return 0


def _cmd_estimate(args):
    instance = serialize.read_json(args.input)
    estimate = estimate_flow_multi(
        instance, tol=args.tol, max_sweeps=args.max_sweeps, log_domain=args.log_domain
    )
    os.makedirs(args.out, exist_ok=True)
    _write_result(estimate, os.path.join(args.out, "estimate.json"))
    grid = np.vstack([instance.prior.mass] + [m.mass for m in estimate.marginals])
    write_csv(os.path.join(args.out, "marginals.csv"), grid)
    write_csv(
        os.path.join(args.out, "dual_trace.csv"),
        np.asarray(estimate.dual_objective_trace, dtype=np.float64)[:, None],
    )
    return 0


def _cmd_bridge(args):
    problem = serialize.read_json(args.input)
    if not isinstance(problem, BridgeProblem):
        raise SchemaError("expected a bridge_problem document", path="$")
    solution = solve_chain(
        problem.mu0, problem.muT, problem.transition, problem.horizon,
        tol=args.tol, max_iters=args.max_sweeps,
    )
    os.makedirs(args.out, exist_ok=True)
    _write_result(solution, os.path.join(args.out, "bridge.json"))
    write_csv(
        os.path.join(args.out, "marginals.csv"),
        np.vstack([m.mass for m in solution.marginals]),
    )
    return 0


def _cmd_oracle(args):
    problem = serialize.read_json(args.input)
    result = generic_kl_solver(problem)
    os.makedirs(args.out, exist_ok=True)
    _write_result(result, os.path.join(args.out, "oracle.json"))
    return 0


def _cmd_likelihood(args):
    doc = _load_document(args.input)
    if doc.get("type") != "likelihood_input":
        raise SchemaError("expected a likelihood_input document", path="$")
    prior = _decode_field(doc, "prior", "$")
    transition = _decode_field(doc, "transition", "$")
    plan = _decode_field(doc, "plan", "$")
    if not isinstance(plan, TransferPlan):
        raise SchemaError("'plan' must be a transfer_plan", path="$.plan")
    report = proposition1_bounds(prior, transition, plan)
    os.makedirs(args.out, exist_ok=True)
    _write_result(report, os.path.join(args.out, "likelihood.json"))
    return 0


def _cmd_probe(args):
    rows = sweep_cost_probe(
        n_values=tuple(args.n_values), m=args.m, t_values=tuple(args.t_values),
        repeats=args.repeats, seed=args.seed if args.seed is not None else 2024,
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "probe.csv")
    with open(path, "w") as handle:
        handle.write("n,m,horizon,ops_model,median_sweep_seconds\n")
        for row in rows:
            handle.write(
                f"{row['n']},{row['m']},{row['horizon']},{row['ops_model']},"
                f"{row['median_sweep_seconds']!r}\n"
            )
    return 0


def _cmd_experiment(args):
    doc = _load_document(args.input)
    config = ExperimentConfig.from_jsonable(doc)
    if args.seed is not None:
        config = ExperimentConfig.from_jsonable({**doc, "seed": args.seed})
    if config.kind == "particle_cloud":
        run_particle_cloud(config, out_dir=args.out)
    elif config.kind == "network":
        run_network(config, out_dir=args.out)
    else:
        raise SchemaError("experiment kind 'custom' has no bundled runner", path="$.kind")
    return 0


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ensemble-flow",
        description="Aggregate-observation flow estimation on hidden Markov chains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("input", help="input JSON document")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--tol", type=float, default=1e-9, help="convergence tolerance")
        p.add_argument("--max-sweeps", type=int, default=10**5, help="iteration budget")
        p.add_argument("--seed", type=int, default=None, help="RNG seed override")
        p.add_argument(
            "--log-domain", choices=("auto", "on", "off"), default="auto",
            help="numeric stabilization of the estimator sweeps",
        )

    common(sub.add_parser("simulate", help="sample a trajectory"))
    common(sub.add_parser("estimate", help="estimate the hidden flow"))
    common(sub.add_parser("bridge", help="solve an endpoint bridge problem"))
    common(sub.add_parser("oracle", help="reference-solve a bridge or estimation problem"))
    common(sub.add_parser("likelihood", help="exact plan likelihood and rate bounds"))
    probe = sub.add_parser("probe", help="time estimator sweeps over an (n, T) grid")
    common(probe, needs_input=False)
    probe.add_argument("--n-values", type=_int_list, default=[50, 100])
    probe.add_argument("--t-values", type=_int_list, default=[10, 20, 40])
    probe.add_argument("--m", type=int, default=5)
    probe.add_argument("--repeats", type=int, default=20)
    common(sub.add_parser("experiment", help="run a bundled experiment from a config"))
    return parser


_HANDLERS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "bridge": _cmd_bridge,
    "oracle": _cmd_oracle,
    "likelihood": _cmd_likelihood,
    "probe": _cmd_probe,
    "experiment": _cmd_experiment,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except SchemaError as exc:
        json.dump(
            {"error": {"type": "SchemaError", "path": exc.path, "message": str(exc)}},
            sys.stdout, sort_keys=True,
        )
        sys.stdout.write("\n")
        return 2
    except EnsembleFlowError as exc:
        payload = {"type": type(exc).__name__, "message": str(exc)}
        for attr in ("residual", "time_index", "index", "indices"):
            value = getattr(exc, attr, None)
            if value is not None:
                payload[attr] = value
        json.dump({"error": payload}, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

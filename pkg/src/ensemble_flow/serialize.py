"""Self-describing JSON interchange for every model and result type.

Documents are plain dicts with a ``"type"`` tag, matrices as row-major
nested lists with explicit dimensions, and a top-level ``"schema"``
version stamp when written to disk.  Model types decode back to objects;
result types encode only.  Files written by :func:`write_json` are byte
deterministic for a given object (sorted keys, native float repr).
"""

import json

import numpy as np

from .bridge import BridgeProblem, BridgeSolution, EntropicOmtProblem, OmtEquivalence
from .core import (
    AggregateObservation,
    Marginal,
    ObservationModel,
    ObservationPlan,
    ProblemInstance,
    TransferPlan,
    TransitionModel,
)
from .divergence import LikelihoodReport
from .errors import SchemaError
from .estimator import DualState, FlowEstimate
from .oracle import OracleResult
from .simulate import NetworkModel, Trajectory

SCHEMA_VERSION = "ensemble-flow/1"


def _vector(arr):
    return [float(x) for x in np.asarray(arr).ravel()]


def _matrix(arr):
    return [[float(x) for x in row] for row in np.asarray(arr)]


def to_jsonable(obj):
    """Encode a model or result object as a JSON-ready dict."""
    if isinstance(obj, Marginal):
        return {"type": "marginal", "length": obj.n, "mass": _vector(obj.mass)}
    if isinstance(obj, TransitionModel):
        return {"type": "transition_model", "shape": list(obj.kernel.shape), "kernel": _matrix(obj.kernel)}
    if isinstance(obj, ObservationModel):
        return {"type": "observation_model", "shape": list(obj.kernel.shape), "kernel": _matrix(obj.kernel)}
    if isinstance(obj, TransferPlan):
        return {
            "type": "transfer_plan",
            "shape": list(obj.flow.shape),
            "time_index": obj.time_index,
            "flow": _matrix(obj.flow),
        }
    if isinstance(obj, ObservationPlan):
        return {
            "type": "observation_plan",
            "shape": list(obj.assignment.shape),
            "time_index": obj.time_index,
            "sensor_index": obj.sensor_index,
            "assignment": _matrix(obj.assignment),
        }
    if isinstance(obj, AggregateObservation):
        return {
            "type": "aggregate_observation",
            "length": obj.m,
            "time_index": obj.time_index,
            "sensor_index": obj.sensor_index,
            "counts": _vector(obj.counts),
        }
    if isinstance(obj, ProblemInstance):
        return {
            "type": "problem_instance",
            "horizon": obj.horizon,
            "prior": to_jsonable(obj.prior),
            "transition": to_jsonable(obj.transition),
            "sensors": [to_jsonable(s) for s in obj.sensors],
            "observations": [[to_jsonable(o) for o in row] for row in obj.observations],
        }
    if isinstance(obj, BridgeProblem):
        return {
            "type": "bridge_problem",
            "horizon": obj.horizon,
            "mu0": to_jsonable(obj.mu0),
            "muT": to_jsonable(obj.muT),
            "transition": to_jsonable(obj.transition),
        }
    if isinstance(obj, EntropicOmtProblem):
        return {
            "type": "entropic_omt_problem",
            "epsilon": float(obj.epsilon),
            "cost": _matrix(obj.cost),
            "mu0": to_jsonable(obj.mu0),
            "mu1": to_jsonable(obj.mu1),
        }
    if isinstance(obj, NetworkModel):
        return {
            "type": "network_model",
            "nodes": [list(p) for p in obj.node_positions],
            "edges": [list(e) for e in obj.edges],
            "preferred_edges": sorted(list(e) for e in obj.preferred_edges),
            "sensors": [list(p) for p in obj.sensor_positions],
        }
    if isinstance(obj, Trajectory):
        return {
            "type": "trajectory",
            "seed": obj.seed,
            "marginals": [to_jsonable(m) for m in obj.marginals],
            "transfer_plans": [to_jsonable(p) for p in obj.transfer_plans],
            "observation_plans": [[to_jsonable(p) for p in row] for row in obj.observation_plans],
            "aggregate_observations": [
                [to_jsonable(o) for o in row] for row in obj.aggregate_observations
            ],
        }
    if isinstance(obj, BridgeSolution):
        return {
            "type": "bridge_solution",
            "objective": float(obj.objective),
            "iterations": obj.iterations,
            "residual": float(obj.residual),
            "plans": [to_jsonable(p) for p in obj.plans],
            "marginals": [to_jsonable(m) for m in obj.marginals],
        }
    if isinstance(obj, OmtEquivalence):
        return {
            "type": "omt_equivalence",
            "epsilon": float(obj.epsilon),
            "objective_offset": float(obj.objective_offset),
            "mu0": to_jsonable(obj.mu0),
            "mu1": to_jsonable(obj.mu1),
            "transition": to_jsonable(obj.transition),
        }
    if isinstance(obj, DualState):
        return {
            "type": "dual_state",
            "u1": _vector(obj.u1),
            "u1_log_scale": float(obj.u1_log_scale),
            "v": [[_vector(vs) for vs in row] for row in obj.v],
            "v_log_scales": _matrix(obj.v_log_scales),
            "y": [_vector(yv) for yv in obj.y],
            "y_log_scales": _vector(obj.y_log_scales),
            "w": [_vector(wv) for wv in obj.w],
            "w_log_scales": _vector(obj.w_log_scales),
        }
    if isinstance(obj, FlowEstimate):
        return {
            "type": "flow_estimate",
            "objective": float(obj.objective),
            "sweeps": obj.sweeps,
            "residual": float(obj.residual),
            "marginals": [to_jsonable(m) for m in obj.marginals],
            "transfer_plans": [to_jsonable(p) for p in obj.transfer_plans],
            "observation_plans": [[to_jsonable(p) for p in row] for row in obj.observation_plans],
            "dual": to_jsonable(obj.dual),
            "dual_objective_trace": [float(x) for x in obj.dual_objective_trace],
        }
    if isinstance(obj, LikelihoodReport):
        return {
            "type": "likelihood_report",
            "exact_log_likelihood": float(obj.exact_log_likelihood),
            "kl_rate": float(obj.kl_rate),
            "upper_slack": float(obj.upper_slack),
            "lower_slack": float(obj.lower_slack),
            "n_particles": float(obj.n_particles),
        }
    if isinstance(obj, OracleResult):
        argmin = {}
        for key, value in obj.argmin.items():
            if key == "observation_plans":
                argmin[key] = [[_matrix(p) for p in row] for row in value]
            elif key in ("plans", "transfer_plans"):
                argmin[key] = [_matrix(p) for p in value]
            elif key == "marginals":
                argmin[key] = [_vector(m) for m in value]
            else:
                argmin[key] = _matrix(value)
        return {
            "type": "oracle_result",
            "objective": float(obj.objective),
            "method": obj.method,
            "certificate": {
                k: (None if v is None else float(v)) for k, v in obj.certificate.items()
            },
            "argmin": argmin,
        }
    raise SchemaError(f"cannot serialize objects of type {type(obj).__name__}")


def _need(doc, key, path):
    if not isinstance(doc, dict):
        raise SchemaError("expected an object", path=path)
    if key not in doc:
        raise SchemaError(f"missing required key '{key}'", path=path)
    return doc[key]


def _array(doc, key, path, ndim):
    raw = _need(doc, key, path)
    try:
        arr = np.array(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"'{key}' is not numeric: {exc}", path=path) from None
    if arr.ndim != ndim:
        raise SchemaError(f"'{key}' must be {ndim}-dimensional, got shape {arr.shape}", path=path)
    return arr


def from_jsonable(doc, path="$"):
    """Decode a model document; raises :class:`SchemaError` naming the path."""
    tag = _need(doc, "type", path)
    try:
        if tag == "marginal":
            return Marginal(_array(doc, "mass", path, 1))
        if tag == "transition_model":
            return TransitionModel(_array(doc, "kernel", path, 2))
        if tag == "observation_model":
            return ObservationModel(_array(doc, "kernel", path, 2))
        if tag == "transfer_plan":
            return TransferPlan(
                _array(doc, "flow", path, 2), time_index=int(_need(doc, "time_index", path))
            )
        if tag == "observation_plan":
            return ObservationPlan(
                _array(doc, "assignment", path, 2),
                time_index=int(_need(doc, "time_index", path)),
                sensor_index=int(doc.get("sensor_index", 0)),
            )
        if tag == "aggregate_observation":
            return AggregateObservation(
                _array(doc, "counts", path, 1),
                time_index=int(_need(doc, "time_index", path)),
                sensor_index=int(doc.get("sensor_index", 0)),
            )
        if tag == "problem_instance":
            sensors = [
                from_jsonable(s, f"{path}.sensors[{i}]")
                for i, s in enumerate(_need(doc, "sensors", path))
            ]
            observations = [
                [
                    from_jsonable(o, f"{path}.observations[{t}][{s}]")
                    for s, o in enumerate(row)
                ]
                for t, row in enumerate(_need(doc, "observations", path))
            ]
            return ProblemInstance(
                prior=from_jsonable(_need(doc, "prior", path), f"{path}.prior"),
                transition=from_jsonable(_need(doc, "transition", path), f"{path}.transition"),
                sensors=sensors,
                observations=observations,
                horizon=int(_need(doc, "horizon", path)),
            )
        if tag == "bridge_problem":
            return BridgeProblem(
                mu0=from_jsonable(_need(doc, "mu0", path), f"{path}.mu0"),
                muT=from_jsonable(_need(doc, "muT", path), f"{path}.muT"),
                transition=from_jsonable(_need(doc, "transition", path), f"{path}.transition"),
                horizon=int(_need(doc, "horizon", path)),
            )
        if tag == "entropic_omt_problem":
            return EntropicOmtProblem(
                cost=_array(doc, "cost", path, 2),
                epsilon=float(_need(doc, "epsilon", path)),
                mu0=from_jsonable(_need(doc, "mu0", path), f"{path}.mu0"),
                mu1=from_jsonable(_need(doc, "mu1", path), f"{path}.mu1"),
            )
        if tag == "network_model":
            return NetworkModel(
                node_positions=_need(doc, "nodes", path),
                edges=_need(doc, "edges", path),
                preferred_edges=doc.get("preferred_edges", ()),
                sensor_positions=_need(doc, "sensors", path),
            )
        if tag == "trajectory":
            return Trajectory(
                marginals=tuple(
                    from_jsonable(m, f"{path}.marginals[{t}]")
                    for t, m in enumerate(_need(doc, "marginals", path))
                ),
                transfer_plans=tuple(
                    from_jsonable(p, f"{path}.transfer_plans[{t}]")
                    for t, p in enumerate(_need(doc, "transfer_plans", path))
                ),
                observation_plans=tuple(
                    tuple(
                        from_jsonable(p, f"{path}.observation_plans[{t}][{s}]")
                        for s, p in enumerate(row)
                    )
                    for t, row in enumerate(_need(doc, "observation_plans", path))
                ),
                aggregate_observations=tuple(
                    tuple(
                        from_jsonable(o, f"{path}.aggregate_observations[{t}][{s}]")
                        for s, o in enumerate(row)
                    )
                    for t, row in enumerate(_need(doc, "aggregate_observations", path))
                ),
                seed=int(_need(doc, "seed", path)),
            )
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), path=path) from None
    raise SchemaError(f"unknown document type '{tag}'", path=path)


def dumps(obj, schema=True):
    """Deterministic JSON text for an object (sorted keys, 2-space indent)."""
    doc = to_jsonable(obj)
    if schema:
        doc = {"schema": SCHEMA_VERSION, **doc}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_json(obj, path):
    with open(path, "w") as handle:
        handle.write(dumps(obj))


def read_json(path):
    """Load and decode a model document from disk."""
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except FileNotFoundError:
        raise SchemaError("file not found", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}", path=str(path)) from None
    return from_jsonable(doc)

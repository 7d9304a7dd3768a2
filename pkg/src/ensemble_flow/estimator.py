"""Most-likely flow estimation on hidden Markov chains from aggregate counts.

Solves, over transfer plans M_t, observation plans D_{t,s} and hidden
marginals mu_t,

    min  sum_t H(M_t | diag(mu_{t-1}) A) + sum_{t,s} H(D_{t,s} | diag(mu_t) B_s)
    s.t. M_t 1 = mu_{t-1},  M_t^T 1 = mu_t,
         D_{t,s} 1 = mu_t,  D_{t,s}^T 1 = Phi_{t,s},

by block coordinate ascent on the dual: a closed-form update of the
scaling vector u_1 followed by closed-form updates of each v_{t,s}, with
forward vectors y_t and backward vectors w_t cached so that one sweep
costs O(T n max(n, m)).  At a fixed point the primal solution is read off
the scaling vectors:

    mu_t = diag(w_t) A^T (mu_{t-1} ./ (A w_t)),
    M_t  = diag(mu_{t-1} ./ (A w_t)) A diag(w_t),
    D_ts = diag(mu_t ./ (B_s v_ts)) B_s diag(v_ts).

The multi-sensor case generalizes the single-sensor recursions by one
(x, v) scaling pair per sensor; the backward recursion multiplies the
per-sensor factors, w_t = (prod_s B_s v_ts) .* (A w_{t+1}).
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _sweeps
from .core import Marginal, ObservationPlan, TransferPlan, validate_instance
from .divergence import plan_divergence
from .errors import ConvergenceError, DegenerateSupportError, PreconditionError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_SWEEPS = 10**5

_DEGENERATE_STATUS = {
    3: "observation update divided by zero (0/0 on a symbol with positive count)",
    4: "backward product collapsed to zero",
    5: "state with positive mass has zero continuation weight",
    6: "forward vector collapsed to zero",
}


@dataclass(frozen=True)
class DualState:
    """Scaling vectors of the dual ascent at exit.

    Every vector is stored normalized to maximum entry 1 together with a
    scalar log-scale; the true vector is ``stored * exp(log_scale)``.
    This keeps the state representable even when horizons are long enough
    for the raw magnitudes to overflow doubles.  ``v[t][s]``, ``y[t]``
    and ``w[t]`` are 0-based in t.
    """

    u1: np.ndarray
    u1_log_scale: float
    v: tuple
    v_log_scales: np.ndarray
    y: tuple
    y_log_scales: np.ndarray
    w: tuple
    w_log_scales: np.ndarray

    def u1_value(self):
        return self.u1 * math.exp(self.u1_log_scale)

    def v_value(self, t, s=0):
        return self.v[t][s] * math.exp(self.v_log_scales[t, s])

    def y_value(self, t):
        return self.y[t] * math.exp(self.y_log_scales[t])

    def w_value(self, t):
        return self.w[t] * math.exp(self.w_log_scales[t])


@dataclass(frozen=True)
class FlowEstimate:
    """Converged output of the flow estimator.

    ``marginals`` holds mu_1..mu_T (the known prior is not repeated);
    ``observation_plans[t][s]`` is the plan of sensor s at time t+1.
    ``dual_objective_trace`` is the dual value after every sweep and is
    non-decreasing; ``residual`` is the largest violation of the four
    constraint families relative to total mass.
    """

    marginals: tuple
    transfer_plans: tuple
    observation_plans: tuple
    dual: DualState
    dual_objective_trace: tuple
    sweeps: int
    residual: float
    objective: float

    def observation_plan(self, t, s=0):
        return self.observation_plans[t][s]

    def zero_marginal_states(self):
        """(time_index, state) pairs whose estimated mass is exactly zero."""
        out = []
        for t, marginal in enumerate(self.marginals):
            for i in np.nonzero(marginal.mass == 0.0)[0]:
                out.append((t + 1, int(i)))
        return out


def _default_v_init(instance):
    return [
        [np.ones(instance.sensors[s].m) for s in range(instance.n_sensors)]
        for _ in range(instance.horizon)
    ]


def _check_v_init(v0, instance):
    if len(v0) != instance.horizon:
        raise PreconditionError(f"v0 must have {instance.horizon} time entries")
    out = []
    for t in range(instance.horizon):
        row = []
        for s in range(instance.n_sensors):
            arr = np.asarray(v0[t][s], dtype=np.float64)
            if arr.shape != (instance.sensors[s].m,) or np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
                raise PreconditionError("v0 entries must be strictly positive finite vectors")
            row.append(arr)
        out.append(row)
    return out


def _reconstruct(instance, mu, w_vectors, v_vectors):
    """Plans, full four-family residual and primal objective from the state."""
    a = instance.transition.kernel
    mu0 = instance.prior.mass
    total = instance.prior.total()
    horizon = instance.horizon
    plans = []
    obs_plans = []
    rabs = 0.0
    objective = 0.0
    prev = mu0
    for t in range(horizon):
        g = a @ w_vectors[t]
        ratio = np.divide(prev, g, out=np.zeros_like(prev), where=prev > 0.0)
        flow = ratio[:, None] * a * w_vectors[t][None, :]
        rabs = max(rabs, float(np.abs(flow.sum(axis=1) - prev).max()))
        rabs = max(rabs, float(np.abs(flow.sum(axis=0) - mu[t]).max()))
        objective += plan_divergence(flow, prev, a)
        plans.append(TransferPlan(flow, time_index=t + 1))
        row = []
        for s in range(instance.n_sensors):
            b = instance.sensors[s].kernel
            vs = v_vectors[t][s]
            bv = b @ vs
            ratio2 = np.divide(mu[t], bv, out=np.zeros_like(mu[t]), where=mu[t] > 0.0)
            assign = ratio2[:, None] * b * vs[None, :]
            rabs = max(rabs, float(np.abs(assign.sum(axis=1) - mu[t]).max()))
            rabs = max(
                rabs,
                float(np.abs(assign.sum(axis=0) - instance.observations[t][s].counts).max()),
            )
            objective += plan_divergence(assign, mu[t], b)
            row.append(ObservationPlan(assign, time_index=t + 1, sensor_index=s))
        obs_plans.append(tuple(row))
        prev = mu[t]
    return tuple(plans), tuple(obs_plans), rabs / total, objective


def _normalized(vec):
    mx = float(vec.max())
    if mx <= 0.0:
        return vec.copy(), 0.0
    return vec / mx, math.log(mx)


def _estimate(instance, tol, max_sweeps, log_domain, v0, on_update=None):
    violations = validate_instance(instance)
    if violations:
        head = "; ".join(str(v) for v in violations[:5])
        raise PreconditionError(f"instance fails validation ({len(violations)} violations): {head}")
    if log_domain not in ("auto", "on", "off"):
        raise PreconditionError("log_domain must be 'auto', 'on' or 'off'")
    v_init = _default_v_init(instance) if v0 is None else _check_v_init(v0, instance)
    a = instance.transition.kernel
    b_list = [s.kernel for s in instance.sensors]
    phi = [
        [instance.observations[t][s].counts for s in range(instance.n_sensors)]
        for t in range(instance.horizon)
    ]
    mu0 = instance.prior.mass
    use_plain = log_domain == "off" or on_update is not None or not _sweeps.NUMBA_AVAILABLE

    if use_plain:
        (status, err_t, err_idx, sweeps, residual, trace,
         u1, v, w, _aw, y_hist, mu) = _sweeps.run_plain(
            a, b_list, phi, mu0, tol, max_sweeps, v_init, on_update=on_update
        )
        v_vectors = v
        w_vectors = w
    else:
        (status, err_t, err_idx, sweeps, residual, trace,
         u1hat, u1_ls, vhat, v_ls, what, w_ls, yhat, y_ls, mu, offsets) = _sweeps.run_scaled(
            a, b_list, phi, mu0, tol, max_sweeps, v_init
        )
        v_vectors = [
            [vhat[t, offsets[s]:offsets[s + 1]] for s in range(instance.n_sensors)]
            for t in range(instance.horizon)
        ]
        w_vectors = [what[t] for t in range(instance.horizon)]

    if status in _DEGENERATE_STATUS:
        raise DegenerateSupportError(
            f"{_DEGENERATE_STATUS[status]} at t={err_t}"
            + (f", index {err_idx}" if err_idx >= 0 else ""),
            time_index=err_t,
            index=err_idx if err_idx >= 0 else None,
        )
    if status == 1:
        raise ConvergenceError(
            f"no convergence after {sweeps} sweeps (residual {residual:.3e})",
            residual=residual,
            trace=trace,
        )

    plans, obs_plans, full_residual, objective = _reconstruct(instance, mu, w_vectors, v_vectors)

    if use_plain:
        u1n, u1s = _normalized(u1)
        v_norm, v_scales = [], np.zeros((instance.horizon, instance.n_sensors))
        for t in range(instance.horizon):
            row = []
            for s in range(instance.n_sensors):
                vec, scale = _normalized(v_vectors[t][s])
                row.append(vec)
                v_scales[t, s] = scale
            v_norm.append(tuple(row))
        y_norm, y_scales = [], np.zeros(instance.horizon)
        w_norm, w_scales = [], np.zeros(instance.horizon)
        for t in range(instance.horizon):
            yv = y_hist[t] if y_hist[t] is not None else np.ones(instance.n)
            vec, scale = _normalized(yv)
            y_norm.append(vec)
            y_scales[t] = scale
            vec, scale = _normalized(w_vectors[t])
            w_norm.append(vec)
            w_scales[t] = scale
        dual = DualState(
            u1=u1n, u1_log_scale=u1s,
            v=tuple(v_norm), v_log_scales=v_scales,
            y=tuple(y_norm), y_log_scales=y_scales,
            w=tuple(w_norm), w_log_scales=w_scales,
        )
    else:
        dual = DualState(
            u1=u1hat, u1_log_scale=u1_ls,
            v=tuple(
                tuple(vhat[t, offsets[s]:offsets[s + 1]] for s in range(instance.n_sensors))
                for t in range(instance.horizon)
            ),
            v_log_scales=v_ls,
            y=tuple(yhat[t] for t in range(instance.horizon)),
            y_log_scales=y_ls,
            w=tuple(what[t] for t in range(instance.horizon)),
            w_log_scales=w_ls,
        )

    return FlowEstimate(
        marginals=tuple(Marginal(mu[t]) for t in range(instance.horizon)),
        transfer_plans=plans,
        observation_plans=obs_plans,
        dual=dual,
        dual_objective_trace=tuple(trace),
        sweeps=sweeps,
        residual=full_residual,
        objective=objective,
    )


def estimate_flow(instance, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS,
                  log_domain="auto", v0=None, on_update=None):
    """Estimate the hidden flow of a single-sensor instance.

    Parameters
    ----------
    instance : ProblemInstance
        Must pass :func:`validate_instance` and have exactly one sensor.
    tol : float, optional
        Convergence threshold: the relative constraint residual and the
        relative per-sweep dual-objective change must both fall below it.
    max_sweeps : int, optional
        Budget of update sweeps; exceeding it raises
        :class:`ConvergenceError` carrying the residual and dual trace.
    log_domain : {"auto", "on", "off"}, optional
        "auto"/"on" run the scale-tracked compiled engine (safe for long
        horizons); "off" runs the plain linear-domain reference.
    v0 : nested sequence, optional
        Strictly positive initialization of the observation scalings,
        indexed [t][s]; defaults to all ones.
    on_update : callable, optional
        Instrumentation hook receiving the dual objective after every
        block update (forces the reference engine; small instances only).

    Returns
    -------
    FlowEstimate
    """
    if instance.n_sensors != 1:
        raise PreconditionError(
            f"estimate_flow expects a single sensor, got {instance.n_sensors}; "
            "use estimate_flow_multi"
        )
    return _estimate(instance, tol, max_sweeps, log_domain, v0, on_update=on_update)


def estimate_flow_multi(instance, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS,
                        log_domain="auto", v0=None, on_update=None):
    """Estimate the hidden flow with any number of sensors (S >= 1).

    Runs the cyclic block ascent with one observation scaling vector per
    sensor and time step; for S = 1 the iteration (and hence the output)
    coincides with :func:`estimate_flow`.  See :func:`estimate_flow` for
    the parameters.
    """
    return _estimate(instance, tol, max_sweeps, log_domain, v0, on_update=on_update)


def evaluate_primal_objective(estimate, instance):
    """Objective value of an estimate under its instance.

    Computes sum_t H(M_t | diag(mu_{t-1}) A) + sum_{t,s} H(D_ts | diag(mu_t) B_s).
    Requires the estimate to be essentially feasible (residual <= 1e-6).
    """
    if estimate.residual > 1e-6:
        raise PreconditionError(
            f"estimate residual {estimate.residual:.3e} exceeds 1e-6; objective is not meaningful"
        )
    a = instance.transition.kernel
    prev = instance.prior.mass
    objective = 0.0
    for t in range(instance.horizon):
        objective += plan_divergence(estimate.transfer_plans[t].flow, prev, a)
        mu_t = estimate.marginals[t].mass
        for s in range(instance.n_sensors):
            objective += plan_divergence(
                estimate.observation_plans[t][s].assignment,
                mu_t,
                instance.sensors[s].kernel,
            )
        prev = mu_t
    return objective


def _probe_instance_arrays(n, m, horizon, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    a = rng.random((n, n)) + 0.05
    a /= a.sum(axis=1, keepdims=True)
    b = rng.random((n, m)) + 0.05
    b /= b.sum(axis=1, keepdims=True)
    mu0 = rng.random(n) + 0.1
    mu0 *= 1000.0 / mu0.sum()
    phi = rng.random((horizon, m)) + 0.1
    phi *= 1000.0 / phi.sum(axis=1, keepdims=True)
    return a, [b], [[phi[t]] for t in range(horizon)], mu0


def sweep_cost_probe(n_values=(50, 100), m=5, t_values=(10, 20, 40), repeats=20, seed=2024,
                     sweeps_per_measurement=3):
    """Measure the wall-clock cost of one estimator sweep across a grid.

    For every (n, T) pair, times the compiled sweep engine ``repeats``
    times on a fixed random instance and records the median per-sweep
    time; each measurement runs ``sweeps_per_measurement`` sweeps to
    amortize timer jitter, and measurements of different grid cells are
    interleaved round-robin so ambient CPU drift hits every cell alike.
    Rows also carry ``ops_model = T * n * max(n, m)``, the operation
    count one sweep is expected to scale with.

    Returns a list of dict rows ordered by (n, T).
    """
    cells = []
    for n in n_values:
        for horizon in t_values:
            a, b_list, phi, mu0 = _probe_instance_arrays(n, m, horizon, seed)
            v_init = [[np.ones(m)] for _ in range(horizon)]
            # warm-up also triggers JIT compilation outside the timings
            _sweeps.run_scaled(a, b_list, phi, mu0, 0.0, 2, v_init)
            cells.append({"n": int(n), "horizon": int(horizon),
                          "args": (a, b_list, phi, mu0), "v_init": v_init, "times": []})
    for _ in range(repeats):
        for cell in cells:
            a, b_list, phi, mu0 = cell["args"]
            start = time.perf_counter()
            _sweeps.run_scaled(a, b_list, phi, mu0, 0.0, sweeps_per_measurement, cell["v_init"])
            cell["times"].append((time.perf_counter() - start) / sweeps_per_measurement)
    return [
        {
            "n": cell["n"],
            "m": int(m),
            "horizon": cell["horizon"],
            "ops_model": int(cell["horizon"] * cell["n"] * max(cell["n"], m)),
            "median_sweep_seconds": float(np.median(cell["times"])),
        }
        for cell in cells
    ]

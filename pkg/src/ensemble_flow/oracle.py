"""Slow-but-sure reference solvers for cross-checking the fast paths.

``brute_force_ml_plan`` maximizes the exact multinomial likelihood by
exhaustive enumeration of integer plans with fixed margins.
``generic_kl_solver`` solves the same convex KL programs as the Sinkhorn
paths, but through a disciplined-convex-programming transcription handed
to an interior-point solver, sharing no iteration machinery with them.
Every result carries a self-computed certificate: the worst constraint
violation (relative to total mass) and, where the KKT system applies, a
stationarity residual obtained by solving one global least-squares system
for the Lagrange multipliers of all coupling constraints, with every
equation weighted by the mass fraction it governs.
"""

import math
from dataclasses import dataclass

import numpy as np

from .bridge import BridgeProblem
from .core import ProblemInstance
from .errors import (
    ConvergenceError,
    EnumerationBoundError,
    InfeasibleMarginalsError,
    PreconditionError,
)

ENUMERATION_MAX_STATES = 4
ENUMERATION_MAX_AGENTS = 12
CERTIFICATE_TOL = 1e-8

# Entries below this fraction of the total mass are treated as boundary
# (inactive) when fitting KKT potentials.
_ACTIVE_FRACTION = 1e-9


@dataclass(frozen=True)
class OracleResult:
    """Reference solution with its self-certificate.

    ``certificate`` maps "constraint_violation" to the worst feasibility
    error relative to total mass and "stationarity_residual" to the KKT
    fit residual (None for combinatorial results, where the solution is
    exact by construction).
    """

    objective: float
    argmin: dict
    method: str
    certificate: dict


def _integer_vector(values, name):
    arr = np.asarray(values, dtype=np.float64)
    rounded = np.rint(arr)
    if np.any(np.abs(arr - rounded) > 1e-9) or np.any(rounded < 0):
        raise PreconditionError(f"{name} must be a nonnegative integer vector")
    return rounded.astype(np.int64)


def brute_force_ml_plan(prior, transition, target):
    """Exact discrete maximum-likelihood transfer plan by enumeration.

    Enumerates, in lexicographic row-major order, every nonnegative
    integer matrix with row sums ``prior``, column sums ``target`` and
    support inside the positive entries of diag(prior) A, and returns the
    one with the largest exact multinomial log-likelihood.

    Limited to n <= 4 states and N <= 12 agents; larger instances raise
    :class:`EnumerationBoundError`.  An empty feasible set raises
    :class:`InfeasibleMarginalsError`.
    """
    row = _integer_vector(prior.mass, "prior")
    col = _integer_vector(target.mass, "target")
    a = transition.kernel
    n = row.shape[0]
    if n > ENUMERATION_MAX_STATES or row.sum() > ENUMERATION_MAX_AGENTS:
        raise EnumerationBoundError(
            f"enumeration bounded to n <= {ENUMERATION_MAX_STATES}, N <= {ENUMERATION_MAX_AGENTS}"
        )
    if col.sum() != row.sum():
        raise InfeasibleMarginalsError("marginal totals differ; no integer plan exists")
    allowed = (row[:, None] * a) > 0.0

    log_a = np.where(a > 0.0, np.log(np.where(a > 0.0, a, 1.0)), 0.0)
    lgamma = math.lgamma

    def row_loglik(i, parts):
        ll = lgamma(row[i] + 1.0)
        for j, mij in enumerate(parts):
            if mij:
                ll += mij * log_a[i, j] - lgamma(mij + 1.0)
        return ll

    best = {"loglik": -np.inf, "plan": None}
    plan = np.zeros((n, n), dtype=np.int64)
    remaining = col.copy()

    def compositions(i, j, left):
        # parts of row i laid out left to right with column-budget pruning
        if j == n - 1:
            if left <= remaining[j] and (left == 0 or allowed[i, j]):
                plan[i, j] = left
                remaining[j] -= left
                yield True
                remaining[j] += left
                plan[i, j] = 0
            return
        hi = min(left, remaining[j]) if allowed[i, j] else 0
        for mij in range(hi + 1):
            plan[i, j] = mij
            remaining[j] -= mij
            yield from compositions(i, j + 1, left - mij)
            remaining[j] += mij
            plan[i, j] = 0

    def rows(i, partial_ll):
        if i == n:
            if remaining.sum() == 0 and partial_ll > best["loglik"]:
                best["loglik"] = partial_ll
                best["plan"] = plan.copy()
            return
        for _ in compositions(i, 0, int(row[i])):
            rows(i + 1, partial_ll + row_loglik(i, plan[i]))

    rows(0, 0.0)
    if best["plan"] is None:
        raise InfeasibleMarginalsError("no integer plan matches the margins on the allowed support")
    return OracleResult(
        objective=float(best["loglik"]),
        argmin={"plan": best["plan"]},
        method="enumeration",
        certificate={"constraint_violation": 0.0, "stationarity_residual": None},
    )


def _masked_kl(p, q):
    # mass below the certificate feasibility level sitting on zero support
    # is solver noise (the exact optimum is 0 there) and contributes 0;
    # anything larger makes the objective infinite
    p = np.maximum(p, 0.0)
    support = p > 0.0
    bad = support & (q == 0.0)
    if np.any(bad):
        if p[bad].max() > CERTIFICATE_TOL * p.sum():
            return float("inf")
        support &= ~bad
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def _zero_support_mass(plan, weights, kernel):
    """Largest plan entry sitting on an exactly-zero prior factor."""
    bad = (weights[:, None] == 0.0) | (kernel == 0.0)
    return float(plan[bad].max()) if np.any(bad) else 0.0


def _stationarity_residual(mu0, kernel_a, b_kernels, marginals, plans, obs_plans, total,
                           terminal_free):
    """Worst mass-weighted violation of the full KKT equality system.

    One global linear system is assembled in the Lagrange multipliers of
    all coupling constraints: every active plan entry contributes
    ``lambda_i + nu_j = log(plan_ij / (weight_i kernel_ij)) + 1`` and
    every interior free marginal entry contributes the link equation
    obtained by differentiating in it.  Solving the whole system at once
    (by least squares) makes the check immune to the gauge freedoms of
    disconnected plan supports, which per-plan fitting is not.  Entries
    below the active threshold are boundary points and carry inequality
    multipliers instead, so they are excluded.

    Each equation is weighted by the mass fraction it governs, so the
    reported residual bounds the first-order objective sensitivity
    relative to total mass.  An unweighted log-domain residual would be
    noise-limited at (feasibility error) / (smallest active mass) and
    could never certify small entries at any solver precision.
    """
    horizon = len(plans)
    n_sensors = len(b_kernels)
    n = kernel_a.shape[0]
    widths = [b.shape[1] for b in b_kernels]

    offsets = {}
    size = 0
    for t in range(horizon):
        offsets[("lm", t)] = size
        size += n
        offsets[("nm", t)] = size
        size += n
        for s in range(n_sensors):
            offsets[("ld", t, s)] = size
            size += n
            offsets[("nd", t, s)] = size
            size += widths[s]

    rows = []
    rhs = []

    def add_plan(plan, weights, kernel, left, right):
        active = (plan > _ACTIVE_FRACTION * total) & (weights[:, None] > 0.0) & (kernel > 0.0)
        for i, j in np.argwhere(active):
            scale = plan[i, j] / total
            row = np.zeros(size)
            row[left + i] = scale
            row[right + j] = scale
            rows.append(row)
            rhs.append(scale * (math.log(plan[i, j] / (weights[i] * kernel[i, j])) + 1.0))

    prev = mu0
    for t in range(horizon):
        add_plan(plans[t], prev, kernel_a, offsets[("lm", t)], offsets[("nm", t)])
        for s in range(n_sensors):
            add_plan(
                obs_plans[t][s], marginals[t], b_kernels[s],
                offsets[("ld", t, s)], offsets[("nd", t, s)],
            )
        prev = marginals[t]

    n_links = horizon if terminal_free else horizon - 1
    for t in range(n_links):
        interior = marginals[t] > _ACTIVE_FRACTION * total
        for i in np.nonzero(interior)[0]:
            scale = marginals[t][i] / total
            row = np.zeros(size)
            row[offsets[("nm", t)] + i] = scale
            for s in range(n_sensors):
                row[offsets[("ld", t, s)] + i] = scale
            target = float(n_sensors)
            if t + 1 < horizon:
                row[offsets[("lm", t + 1)] + i] = scale
                target += 1.0
            rows.append(row)
            rhs.append(scale * target)

    if not rows:
        return 0.0
    design = np.vstack(rows)
    target_vec = np.asarray(rhs)
    solution, *_ = np.linalg.lstsq(design, target_vec, rcond=None)
    return float(np.abs(design @ solution - target_vec).max())


def _certificate_worst(result):
    cert = result.certificate
    return max(cert["constraint_violation"], cert["stationarity_residual"] or 0.0)


def _solve_with_ladder(problem_builder, assess, certificate_tol):
    """Try solver configurations in order; return the first whose certificate passes.

    Every candidate is judged by our own certificate, never by the
    solver's status alone.  The ladder starts with Clarabel at tight
    tolerances; near-degenerate instances where its static regularization
    biases the KKT point are retried without it, then on an exactly
    mass-rescaled copy of the program (the KL program is 1-homogeneous in
    total mass, so the rescaled solve has the same solution but a
    different numerical path), and finally with high-accuracy SCS.  If
    no rung reaches ``certificate_tol`` the best candidate's certificate
    is reported in the error.
    """
    import warnings

    import cvxpy as cp

    tight = {"tol_gap_abs": 1e-12, "tol_gap_rel": 1e-12, "tol_feas": 1e-12}
    ladder = [
        (cp.CLARABEL, tight, 1.0),
        (cp.CLARABEL, {**tight, "static_regularization_enable": False}, 1.0),
        (cp.CLARABEL, tight, math.e),
        (cp.SCS, {"eps": 1e-10, "max_iters": 10**6}, 1.0),
    ]
    built = {}
    best = None
    last_exc = None
    status = None
    for solver, opts, scale in ladder:
        if scale not in built:
            built[scale] = problem_builder(cp, scale)
        prob, extract = built[scale]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                prob.solve(solver=solver, **opts)
        except cp.error.SolverError as exc:  # pragma: no cover - solver specific
            last_exc = exc
            continue
        status = prob.status
        if status not in ("optimal", "optimal_inaccurate"):
            continue
        result = assess(extract(), f"cvxpy:{solver}")
        if _certificate_worst(result) <= certificate_tol:
            return result
        if best is None or _certificate_worst(result) < _certificate_worst(best):
            best = result
    if best is not None:
        raise ConvergenceError(
            f"reference solve certificate {_certificate_worst(best):.3e} exceeds "
            f"{certificate_tol:.1e}",
            residual=_certificate_worst(best),
        )
    raise ConvergenceError(f"convex reference solve failed (last status: {status}, {last_exc})")


def _solve_hmm_program(instance, certificate_tol=CERTIFICATE_TOL):
    a = instance.transition.kernel
    b_kernels = [s.kernel for s in instance.sensors]
    mu0 = instance.prior.mass
    horizon = instance.horizon
    n = instance.n
    n_sensors = instance.n_sensors
    log_a = np.where(a > 0.0, np.log(np.where(a > 0.0, a, 1.0)), 0.0)
    log_b = [np.where(b > 0.0, np.log(np.where(b > 0.0, b, 1.0)), 0.0) for b in b_kernels]

    def build(cp, scale=1.0):
        ones_n = np.ones(n)
        mu0_s = mu0 * scale
        plans = [cp.Variable((n, n), nonneg=True) for _ in range(horizon)]
        obs = [[cp.Variable((n, b_kernels[s].shape[1]), nonneg=True) for s in range(n_sensors)]
               for _ in range(horizon)]
        mus = [cp.Variable(n, nonneg=True) for _ in range(horizon)]
        objective = 0
        constraints = []
        for t in range(horizon):
            if t == 0:
                ref = cp.Constant(np.outer(mu0_s, ones_n))
                prev = mu0_s
                mask = (mu0_s[:, None] * a) == 0.0
            else:
                ref = cp.outer(mus[t - 1], ones_n)
                prev = mus[t - 1]
                mask = a == 0.0
            objective += cp.sum(cp.rel_entr(plans[t], ref)) - cp.sum(cp.multiply(plans[t], log_a))
            constraints += [plans[t] @ ones_n == prev, plans[t].T @ ones_n == mus[t]]
            if np.any(mask):
                constraints.append(plans[t][mask] == 0)
            for s in range(n_sensors):
                b = b_kernels[s]
                ones_m = np.ones(b.shape[1])
                objective += cp.sum(cp.rel_entr(obs[t][s], cp.outer(mus[t], ones_m)))
                objective -= cp.sum(cp.multiply(obs[t][s], log_b[s]))
                constraints += [
                    obs[t][s] @ ones_m == mus[t],
                    obs[t][s].T @ ones_n == instance.observations[t][s].counts * scale,
                ]
                if np.any(b == 0.0):
                    constraints.append(obs[t][s][b == 0.0] == 0)
        prob = cp.Problem(cp.Minimize(objective), constraints)

        def extract():
            return (
                [np.maximum(p.value, 0.0) / scale for p in plans],
                [[np.maximum(obs[t][s].value, 0.0) / scale for s in range(n_sensors)]
                 for t in range(horizon)],
                [np.maximum(m.value, 0.0) / scale for m in mus],
            )

        return prob, extract

    total = float(mu0.sum())

    def assess(extracted, method):
        plan_vals, obs_vals, mu_vals = extracted
        objective = 0.0
        violation = 0.0
        prev = mu0
        for t in range(horizon):
            objective += _masked_kl(plan_vals[t], prev[:, None] * a)
            violation = max(violation, float(np.abs(plan_vals[t].sum(axis=1) - prev).max()))
            violation = max(violation, float(np.abs(plan_vals[t].sum(axis=0) - mu_vals[t]).max()))
            violation = max(violation, _zero_support_mass(plan_vals[t], prev, a))
            for s in range(n_sensors):
                objective += _masked_kl(obs_vals[t][s], mu_vals[t][:, None] * b_kernels[s])
                violation = max(violation, float(np.abs(obs_vals[t][s].sum(axis=1) - mu_vals[t]).max()))
                violation = max(
                    violation,
                    float(np.abs(obs_vals[t][s].sum(axis=0) - instance.observations[t][s].counts).max()),
                )
                violation = max(violation, _zero_support_mass(obs_vals[t][s], mu_vals[t], b_kernels[s]))
            prev = mu_vals[t]
        stationarity = _stationarity_residual(
            mu0, a, b_kernels, mu_vals, plan_vals, obs_vals, total, terminal_free=True
        )
        return OracleResult(
            objective=objective,
            argmin={"transfer_plans": plan_vals, "observation_plans": obs_vals, "marginals": mu_vals},
            method=method,
            certificate={
                "constraint_violation": violation / total,
                "stationarity_residual": stationarity,
            },
        )

    return _solve_with_ladder(build, assess, certificate_tol)


def _solve_bridge_program(problem, certificate_tol=CERTIFICATE_TOL):
    a = problem.transition.kernel
    mu0 = problem.mu0.mass
    mu_t = problem.muT.mass
    horizon = problem.horizon
    n = problem.transition.n
    log_a = np.where(a > 0.0, np.log(np.where(a > 0.0, a, 1.0)), 0.0)

    def build(cp, scale=1.0):
        ones_n = np.ones(n)
        mu0_s = mu0 * scale
        plans = [cp.Variable((n, n), nonneg=True) for _ in range(horizon)]
        mids = [cp.Variable(n, nonneg=True) for _ in range(horizon - 1)]
        objective = 0
        constraints = []
        for t in range(horizon):
            if t == 0:
                ref = cp.Constant(np.outer(mu0_s, ones_n))
                prev = mu0_s
                mask = (mu0_s[:, None] * a) == 0.0
            else:
                ref = cp.outer(mids[t - 1], ones_n)
                prev = mids[t - 1]
                mask = a == 0.0
            nxt = mu_t * scale if t == horizon - 1 else mids[t]
            objective += cp.sum(cp.rel_entr(plans[t], ref)) - cp.sum(cp.multiply(plans[t], log_a))
            constraints += [plans[t] @ ones_n == prev, plans[t].T @ ones_n == nxt]
            if np.any(mask):
                constraints.append(plans[t][mask] == 0)
        prob = cp.Problem(cp.Minimize(objective), constraints)

        def extract():
            return (
                [np.maximum(p.value, 0.0) / scale for p in plans],
                [np.maximum(m.value, 0.0) / scale for m in mids],
            )

        return prob, extract

    total = float(mu0.sum())

    def assess(extracted, method):
        plan_vals, mid_vals = extracted
        marginals = [mu0] + mid_vals + [mu_t]
        objective = 0.0
        violation = 0.0
        for t in range(horizon):
            objective += _masked_kl(plan_vals[t], marginals[t][:, None] * a)
            violation = max(violation, float(np.abs(plan_vals[t].sum(axis=1) - marginals[t]).max()))
            violation = max(violation, float(np.abs(plan_vals[t].sum(axis=0) - marginals[t + 1]).max()))
            violation = max(violation, _zero_support_mass(plan_vals[t], marginals[t], a))
        stationarity = _stationarity_residual(
            mu0, a, [], mid_vals + [mu_t], plan_vals, [[] for _ in range(horizon)], total,
            terminal_free=False,
        )
        return OracleResult(
            objective=objective,
            argmin={"plans": plan_vals, "marginals": marginals},
            method=method,
            certificate={
                "constraint_violation": violation / total,
                "stationarity_residual": stationarity,
            },
        )

    return _solve_with_ladder(build, assess, certificate_tol)


def generic_kl_solver(problem, certificate_tol=CERTIFICATE_TOL):
    """Solve a bridge or flow-estimation KL program by an independent route.

    Accepts a :class:`BridgeProblem` (endpoint-constrained chain) or a
    :class:`ProblemInstance` (hidden-chain estimation, any number of
    sensors).  The program is transcribed with relative-entropy atoms and
    solved by an interior-point method; nothing is shared with the
    scaling-iteration solvers beyond numpy products.  Raises
    :class:`ConvergenceError` if the self-certificate does not reach
    ``certificate_tol``.
    """
    if isinstance(problem, BridgeProblem):
        return _solve_bridge_program(problem, certificate_tol)
    if isinstance(problem, ProblemInstance):
        return _solve_hmm_program(problem, certificate_tol)
    raise PreconditionError(f"unsupported problem type: {type(problem).__name__}")

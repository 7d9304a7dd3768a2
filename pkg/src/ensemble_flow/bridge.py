"""Discrete Schrodinger-bridge solvers over Markov chains.

Given endpoint marginals mu_0 and mu_T and a row-stochastic prior kernel A,
the most likely ensemble evolution minimizes

    sum_t H(M_t | diag(mu_{t-1}) A)

over transfer plans M_t with consistent marginals.  Because the prior is
Markov and only the endpoints are constrained, the chain problem reduces to
a single coupling problem against the T-step kernel; that coupling is
found by Sinkhorn scaling (alternating diagonal rescaling), and the
intermediate plans and marginals are recovered from forward/backward
potential vectors.
"""

from dataclasses import dataclass

import numpy as np

from .core import Marginal, TransferPlan, TransitionModel
from .divergence import plan_divergence
from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    FactorizationError,
    InfeasibleMarginalsError,
    PreconditionError,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITERS = 10**5

# Infeasibility heuristic: if the residual has not improved by this factor
# over a window of sweeps, run the support max-flow check.
_STAGNATION_WINDOW = 100
_STAGNATION_FACTOR = 0.999


@dataclass(frozen=True)
class BridgeProblem:
    """Endpoint-constrained chain problem (inputs of the chain solver)."""

    mu0: Marginal
    muT: Marginal
    transition: TransitionModel
    horizon: int


@dataclass(frozen=True)
class BridgeSolution:
    """Solution of a chain bridge problem.

    ``marginals`` has length T+1 with the given endpoints stored exactly;
    ``plans`` has length T and satisfies the marginal constraints within
    ``residual`` (infinity norm, relative to total mass).
    """

    plans: tuple
    marginals: tuple
    objective: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class EntropicOmtProblem:
    """Entropy-regularized transport problem: min <C, M> + eps * H(M | 1)."""

    cost: np.ndarray
    epsilon: float
    mu0: Marginal
    mu1: Marginal

    def __post_init__(self):
        object.__setattr__(self, "cost", np.array(self.cost, dtype=np.float64))
        if self.epsilon <= 0.0:
            raise PreconditionError("epsilon must be positive")


@dataclass(frozen=True)
class OmtEquivalence:
    """KL-bridge restatement of an entropic transport problem.

    Solving the single-step bridge on (mu0, mu1, transition) yields the
    minimizer of the original problem, and the objectives are related by

        omt_objective(M) = epsilon * (kl_objective(M) + objective_offset).
    """

    mu0: Marginal
    mu1: Marginal
    transition: TransitionModel
    objective_offset: float
    epsilon: float

    def __iter__(self):
        return iter((self.mu0, self.mu1, self.transition))


def _transport_feasible(support, row, col, rel_tol=1e-7):
    """Max-flow check: can ``row`` be routed to ``col`` on ``support``?

    Bipartite flow network with source capacities ``row``, sink capacities
    ``col`` and unbounded capacity on supported (i, j) arcs; feasible iff
    the max flow equals the total mass.  Plain Edmonds-Karp on a dense
    capacity matrix; fine at the few-hundred-state scale this package
    targets.
    """
    n, m = support.shape
    total = row.sum()
    size = n + m + 2
    source, sink = 0, size - 1
    cap = np.zeros((size, size))
    cap[source, 1 : n + 1] = row
    cap[n + 1 : n + 1 + m, sink] = col
    big = total + 1.0
    for i in range(n):
        js = np.nonzero(support[i])[0]
        cap[1 + i, 1 + n + js] = big

    flow = 0.0
    slack = rel_tol * max(total, 1.0)
    while True:
        parent = np.full(size, -1, dtype=np.int64)
        parent[source] = source
        queue = [source]
        while queue and parent[sink] < 0:
            node = queue.pop(0)
            for nxt in np.nonzero(cap[node] > slack)[0]:
                if parent[nxt] < 0:
                    parent[nxt] = node
                    queue.append(nxt)
        if parent[sink] < 0:
            break
        bottleneck = np.inf
        node = sink
        while node != source:
            bottleneck = min(bottleneck, cap[parent[node], node])
            node = parent[node]
        node = sink
        while node != source:
            cap[parent[node], node] -= bottleneck
            cap[node, parent[node]] += bottleneck
            node = parent[node]
        flow += bottleneck
    return flow >= total - rel_tol * max(total, 1.0)


def _sinkhorn(kernel, row, col, tol, max_iters, v0=None):
    """Diagonal scaling (u, v) with diag(u) K diag(v) matching row/col.

    The residual is the infinity-norm violation of the column constraint
    measured right after each row rescaling, relative to total mass; it is
    checked once per sweep at that fixed point of the loop.  Raises
    :class:`InfeasibleMarginalsError` when the marginals cannot be coupled
    on the kernel support (detected by residual stagnation plus a support
    max-flow check) and :class:`ConvergenceError` when the iteration
    budget runs out.
    """
    total = float(row.sum())
    if total <= 0.0:
        raise PreconditionError("total mass must be positive")
    v = np.ones(kernel.shape[1]) if v0 is None else np.array(v0, dtype=np.float64)
    if np.any(v <= 0.0):
        raise PreconditionError("initialization must be strictly positive")
    row_pos = row > 0.0
    col_pos = col > 0.0
    v[~col_pos] = 0.0
    trace = []
    checked_feasible = False
    for it in range(1, max_iters + 1):
        kv = kernel @ v
        dead = row_pos & (kv == 0.0)
        if np.any(dead):
            raise InfeasibleMarginalsError(
                f"state {int(np.nonzero(dead)[0][0])} has mass but no supported route to the target"
            )
        u = np.divide(row, kv, out=np.zeros_like(row), where=row_pos)
        colsum = v * (kernel.T @ u)
        residual = float(np.abs(colsum - col).max() / total)
        trace.append(residual)
        if residual <= tol:
            return u, v, residual, it, trace
        if (
            not checked_feasible
            and it > _STAGNATION_WINDOW
            and trace[-1] > _STAGNATION_FACTOR * trace[-1 - _STAGNATION_WINDOW]
        ):
            support = (kernel > 0.0) & row_pos[:, None]
            if not _transport_feasible(support, row, col):
                raise InfeasibleMarginalsError(
                    "marginals are not coupled by any plan on the kernel support "
                    f"(residual stalled at {residual:.3e})"
                )
            checked_feasible = True
        ktu = kernel.T @ u
        dead = col_pos & (ktu == 0.0)
        if np.any(dead):
            raise InfeasibleMarginalsError(
                f"target state {int(np.nonzero(dead)[0][0])} has mass but no supported route from the source"
            )
        v = np.divide(col, ktu, out=np.zeros_like(col), where=col_pos)
        scale = u.max()
        if scale > 0.0 and (scale > 1e100 or scale < 1e-100):
            u /= scale
            v *= scale
    raise ConvergenceError(
        f"no convergence after {max_iters} sweeps (residual {trace[-1]:.3e})",
        residual=trace[-1],
        trace=trace,
    )


def _chain_objective(plans, marginals, kernel):
    obj = 0.0
    for t, plan in enumerate(plans):
        obj += plan_divergence(plan, marginals[t], kernel)
    return obj


def solve_chain(mu0, muT, transition, horizon, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, v0=None):
    """Most likely T-step evolution between two fixed marginals.

    Couples the endpoints against the T-step kernel by Sinkhorn scaling,
    then recovers the per-step plans M_t = diag(phi_{t-1}) A diag(psi_t)
    from the forward potentials phi_t = A^T phi_{t-1} and backward
    potentials psi_t = A psi_{t+1}.  The returned marginals list stores
    the given endpoints exactly.

    Parameters
    ----------
    mu0, muT : Marginal
        Endpoint distributions with equal total mass.
    transition : TransitionModel
        Prior kernel A, shared by all steps.
    horizon : int
        Number of steps T >= 1.
    tol : float, optional
        Convergence threshold on the relative infinity-norm marginal
        violation.
    max_iters : int, optional
        Sinkhorn sweep budget.
    v0 : array_like, optional
        Strictly positive initialization of the column scaling.
    """
    if horizon < 1:
        raise PreconditionError("horizon must be >= 1")
    n = transition.n
    if mu0.n != n or muT.n != n:
        raise DimensionMismatchError("marginals and transition kernel disagree on n")
    total = mu0.total()
    if abs(muT.total() - total) > 1e-9 * max(total, 1.0):
        raise PreconditionError(
            f"endpoint masses differ: {total!r} vs {muT.total()!r}"
        )
    a = transition.kernel
    a_pow = np.eye(n)
    for _ in range(horizon):
        a_pow = a_pow @ a
    kernel = mu0.mass[:, None] * a_pow
    u, v, residual, iterations, _ = _sinkhorn(kernel, mu0.mass, muT.mass, tol, max_iters, v0=v0)

    psi = [None] * (horizon + 1)
    psi[horizon] = v
    for t in range(horizon - 1, -1, -1):
        psi[t] = a @ psi[t + 1]
    phi = [None] * (horizon + 1)
    phi[0] = mu0.mass * u
    for t in range(1, horizon + 1):
        phi[t] = a.T @ phi[t - 1]

    marginal_arrays = [mu0.mass]
    for t in range(1, horizon):
        marginal_arrays.append(phi[t] * psi[t])
    marginal_arrays.append(muT.mass)
    plan_arrays = [phi[t - 1][:, None] * a * psi[t][None, :] for t in range(1, horizon + 1)]

    objective = _chain_objective(plan_arrays, marginal_arrays, a)
    return BridgeSolution(
        plans=tuple(TransferPlan(p, time_index=t + 1) for t, p in enumerate(plan_arrays)),
        marginals=tuple(Marginal(m) for m in marginal_arrays),
        objective=objective,
        iterations=iterations,
        residual=residual,
    )


def solve_single_step(mu0, mu1, transition, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, v0=None):
    """Most likely one-step transfer plan between mu0 and mu1.

    Equivalent to :func:`solve_chain` with horizon 1: minimizes
    H(M | diag(mu0) A) subject to the two marginal constraints.
    """
    return solve_chain(mu0, mu1, transition, horizon=1, tol=tol, max_iters=max_iters, v0=v0)


def omt_to_kl(problem):
    """Restate an entropic transport problem as a single-step bridge.

    The kernel P = exp(-C / eps) is row-normalized into a transition
    model A with diag(mu0) A proportional to P row by row, so both
    problems have the same minimizer.  The reported offset makes the
    objectives comparable:

        <C, M> + eps * H(M | 1) = eps * (H(M | diag(mu0) A) + offset)

    for every feasible M, with offset = sum_i mu0_i log(mu0_i / (P 1)_i).
    """
    cost = problem.cost
    if not np.all(np.isfinite(cost)):
        raise PreconditionError("cost matrix must be finite")
    mu0 = problem.mu0.mass
    if np.any(mu0 <= 0.0):
        raise PreconditionError("mu0 must be strictly positive")
    prior_kernel = np.exp(-cost / problem.epsilon)
    row_sums = prior_kernel.sum(axis=1)
    transition = TransitionModel(prior_kernel / row_sums[:, None])
    offset = float(np.sum(mu0 * np.log(mu0 / row_sums)))
    return OmtEquivalence(
        mu0=problem.mu0,
        mu1=problem.mu1,
        transition=transition,
        objective_offset=offset,
        epsilon=problem.epsilon,
    )


def factor_row_stochastic(solution):
    """Factor each plan as M_t = diag(mu_{t-1}) Mbar_t with Mbar_t row-stochastic.

    Requires strictly positive source marginals; raises
    :class:`FactorizationError` otherwise (a zero-mass state with positive
    outgoing flow has no factorization at all, and a zero-mass state with
    zero flow leaves the factor row undefined).
    """
    factors = []
    for t, plan in enumerate(solution.plans):
        mu = solution.marginals[t].mass
        flow = plan.flow
        zero = mu == 0.0
        if np.any(zero):
            bad = np.nonzero(zero)[0]
            if np.any(flow[bad].sum(axis=1) > 0.0):
                raise FactorizationError(
                    f"step {t + 1}: positive outgoing flow from zero-mass state {int(bad[0])}"
                )
            raise FactorizationError(
                f"step {t + 1}: zero-mass state {int(bad[0])} leaves the factor row undefined"
            )
        factors.append(flow / mu[:, None])
    return factors

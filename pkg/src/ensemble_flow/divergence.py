"""Generalized KL divergence and exact multinomial flow likelihoods.

The divergence here is the unnormalized form H(p|q) = sum_i p_i log(p_i/q_i)
with 0 log 0 = 0, defined for nonnegative vectors or matrices.  It is the
large-ensemble rate function of the exact multinomial transfer likelihood;
:func:`proposition1_bounds` exposes the two Stirling-formula inequalities
that tie the two together at finite ensemble size.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import PreconditionError, SupportViolationError

_INT_TOL = 1e-9


def kl_divergence(p, q):
    """Generalized Kullback-Leibler divergence H(p|q) = sum p log(p/q).

    Accepts nonnegative vectors or matrices of matching shape (matrices
    are treated as flattened).  Entries with p_i = 0 contribute 0; an
    entry with p_i > 0 and q_i = 0 makes the divergence infinite and
    raises :class:`SupportViolationError` carrying the offending indices.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise PreconditionError(f"shape mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise PreconditionError("kl_divergence requires nonnegative inputs")
    p = p.ravel()
    q = q.ravel()
    support = p > 0.0
    bad = support & (q == 0.0)
    if np.any(bad):
        idx = np.nonzero(bad)[0]
        raise SupportViolationError(
            f"divergence is infinite: p > 0 where q = 0 at flat indices {idx.tolist()}",
            indices=idx.tolist(),
        )
    ps = p[support]
    return float(np.sum(ps * np.log(ps / q[support])))


def plan_divergence(plan, weights, kernel):
    """H(plan | diag(weights) kernel), evaluated stably from factor logs.

    Mathematically identical to ``kl_divergence(plan, weights[:, None] *
    kernel)`` but immune to underflow of the product, which matters for
    long horizons where tiny marginals multiply tiny kernel entries below
    the double range.  Plan mass sitting on an exactly zero factor raises
    :class:`SupportViolationError` unless it is float dust (below 1e-12
    of the plan total), which is treated as an exact zero.
    """
    plan = np.asarray(plan, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    support = plan > 0.0
    bad = support & ((weights[:, None] == 0.0) | (kernel == 0.0))
    if np.any(bad):
        if plan[bad].max() > 1e-12 * plan.sum():
            rows = np.argwhere(bad)
            raise SupportViolationError(
                f"divergence is infinite: plan mass on zero-probability entries {rows[:5].tolist()}",
                indices=[tuple(int(x) for x in r) for r in rows],
            )
        support &= ~bad
    i, j = np.nonzero(support)
    f = plan[i, j]
    return float(np.sum(f * (np.log(f) - np.log(weights[i]) - np.log(kernel[i, j]))))


def _as_integer_array(values, name):
    arr = np.asarray(values, dtype=np.float64)
    rounded = np.rint(arr)
    if np.any(np.abs(arr - rounded) > _INT_TOL):
        raise PreconditionError(f"{name} must have integer entries")
    if np.any(rounded < 0.0):
        raise PreconditionError(f"{name} must be nonnegative")
    return rounded


def log_transfer_likelihood(prior, transition, plan):
    """Exact log-probability of an integer transfer plan.

    The plan's rows are independent multinomial draws: row i distributes
    the ``prior.mass[i]`` agents over destinations with probabilities
    ``transition.kernel[i, :]``.  Multinomial coefficients are evaluated
    with log-gamma, never raw factorials.

    Returns ``-inf`` (with no exception) when the plan puts mass on a
    transition of probability zero, since such a plan has probability 0.
    Raises :class:`PreconditionError` for non-integer entries or row sums
    that do not match the prior.
    """
    mu = _as_integer_array(prior.mass, "prior")
    flow = _as_integer_array(plan.flow, "plan")
    a = transition.kernel
    if flow.shape != a.shape or mu.shape[0] != a.shape[0]:
        raise PreconditionError("prior, transition and plan dimensions disagree")
    if np.any(np.abs(flow.sum(axis=1) - mu) > _INT_TOL):
        raise PreconditionError("plan row sums must equal the prior exactly")

    on_zero = (flow > 0.0) & (a == 0.0)
    if np.any(on_zero):
        return float("-inf")

    loglik = float(np.sum(gammaln(mu + 1.0)) - np.sum(gammaln(flow + 1.0)))
    support = flow > 0.0
    loglik += float(np.sum(flow[support] * np.log(a[support])))
    return loglik


@dataclass(frozen=True)
class LikelihoodReport:
    """Exact transfer log-likelihood against its rate-function bounds.

    ``kl_rate`` is H(plan | diag(prior) A).  ``upper_slack`` and
    ``lower_slack`` are the gaps of the two Stirling inequalities

        log P <= -H + (n/2) log N
        log P >= -H - (1/2) (n^2 + n(n-1) log(2 pi) / log N) log N

    and are nonnegative for every integer instance with N >= 2 agents.
    """

    exact_log_likelihood: float
    kl_rate: float
    upper_slack: float
    lower_slack: float
    n_particles: float


def proposition1_bounds(prior, transition, plan):
    """Evaluate the exact likelihood and both finite-N rate bounds.

    Requires an integer prior/plan with at least N = 2 agents (so that
    log N > 0) and the plan supported on the prior-weighted kernel.
    """
    mu = _as_integer_array(prior.mass, "prior")
    total = float(mu.sum())
    if total < 2.0:
        raise PreconditionError("bounds require at least 2 agents (log N must be positive)")
    loglik = log_transfer_likelihood(prior, transition, plan)
    rate = kl_divergence(plan.flow, prior.mass[:, None] * transition.kernel)
    n = float(prior.n)
    log_n_particles = np.log(total)
    upper = -rate + 0.5 * n * log_n_particles
    lower = -rate - 0.5 * (n * n + n * (n - 1.0) * np.log(2.0 * np.pi) / log_n_particles) * log_n_particles
    return LikelihoodReport(
        exact_log_likelihood=loglik,
        kl_rate=rate,
        upper_slack=float(upper - loglik),
        lower_slack=float(loglik - lower),
        n_particles=total,
    )

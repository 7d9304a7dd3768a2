"""Domain types for ensemble-flow problems and their validation.

All model objects wrap immutable float64 numpy arrays.  Value-level
invariants (nonnegativity, row-stochasticity, mass conservation) are not
enforced at construction time; :func:`validate_instance` reports them as a
list of violations so that deliberately broken instances can be built and
inspected.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, PreconditionError

# Row sums of stochastic kernels must match 1 to this absolute tolerance.
ROW_SUM_TOL = 1e-12
# Observed totals must match the ensemble mass to this relative tolerance.
MASS_TOL_REL = 1e-9


def _freeze(values, ndim, name):
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionMismatchError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Marginal:
    """Mass of the ensemble per hidden state (counts or continuum mass)."""

    mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", _freeze(self.mass, 1, "Marginal.mass"))

    @property
    def n(self):
        return self.mass.shape[0]

    def total(self):
        return float(self.mass.sum())


def _row_normalized(kernel):
    sums = kernel.sum(axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        raise PreconditionError("cannot renormalize a kernel with a nonpositive row sum")
    return kernel / sums


@dataclass(frozen=True)
class TransitionModel:
    """Row-stochastic n-by-n state transition kernel.

    Parameters
    ----------
    kernel : array_like, shape (n, n)
        ``kernel[i, j]`` is the probability of moving from state i to j.
    renormalize : bool, optional
        Divide each row by its sum at construction.  Off by default so
        that slightly off kernels surface in :func:`validate_instance`
        instead of being silently repaired.
    """

    kernel: np.ndarray
    renormalize: bool = field(default=False, compare=False)

    def __post_init__(self):
        arr = np.array(self.kernel, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatchError(f"TransitionModel.kernel must be square, got {arr.shape}")
        if self.renormalize:
            arr = _row_normalized(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "kernel", arr)

    @property
    def n(self):
        return self.kernel.shape[0]


@dataclass(frozen=True)
class ObservationModel:
    """Row-stochastic n-by-m emission kernel of one sensor."""

    kernel: np.ndarray
    renormalize: bool = field(default=False, compare=False)

    def __post_init__(self):
        arr = np.array(self.kernel, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise DimensionMismatchError(f"ObservationModel.kernel must be 2-d, got {arr.shape}")
        if self.renormalize:
            arr = _row_normalized(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "kernel", arr)

    @property
    def n(self):
        return self.kernel.shape[0]

    @property
    def m(self):
        return self.kernel.shape[1]


@dataclass(frozen=True)
class TransferPlan:
    """Mass moved between hidden states over one time step.

    ``flow[i, j]`` is the mass moving from state i at time ``time_index - 1``
    to state j at ``time_index``; row sums equal the source marginal and
    column sums the destination marginal.
    """

    flow: np.ndarray
    time_index: int

    def __post_init__(self):
        object.__setattr__(self, "flow", _freeze(self.flow, 2, "TransferPlan.flow"))
        if self.flow.shape[0] != self.flow.shape[1]:
            raise DimensionMismatchError(f"TransferPlan.flow must be square, got {self.flow.shape}")

    def source_marginal(self):
        return Marginal(self.flow.sum(axis=1))

    def destination_marginal(self):
        return Marginal(self.flow.sum(axis=0))


@dataclass(frozen=True)
class ObservationPlan:
    """Assignment of hidden-state mass to observation symbols at one time.

    Row sums equal the hidden marginal at ``time_index``; column sums
    equal the aggregate observation of sensor ``sensor_index``.
    """

    assignment: np.ndarray
    time_index: int
    sensor_index: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "assignment", _freeze(self.assignment, 2, "ObservationPlan.assignment")
        )

    def hidden_marginal(self):
        return Marginal(self.assignment.sum(axis=1))

    def observed_counts(self):
        return self.assignment.sum(axis=0)


@dataclass(frozen=True)
class AggregateObservation:
    """Per-symbol counts of the whole ensemble seen by one sensor."""

    counts: np.ndarray
    time_index: int
    sensor_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "counts", _freeze(self.counts, 1, "AggregateObservation.counts"))

    @property
    def m(self):
        return self.counts.shape[0]

    def total(self):
        return float(self.counts.sum())


@dataclass(frozen=True)
class ProblemInstance:
    """A full flow-estimation problem.

    Parameters
    ----------
    prior : Marginal
        Known initial distribution of the ensemble.
    transition : TransitionModel
        Hidden-chain transition kernel shared by all time steps.
    sensors : sequence of ObservationModel
        One emission kernel per sensor (length S >= 1).
    observations : sequence of sequences of AggregateObservation
        ``observations[t][s]`` is the observation of sensor ``s`` at time
        ``t + 1``; the grid has shape T-by-S.
    horizon : int
        Number of time steps T.
    """

    prior: Marginal
    transition: TransitionModel
    sensors: tuple
    observations: tuple
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "observations", tuple(tuple(row) for row in self.observations))

    @property
    def n(self):
        return self.prior.n

    @property
    def n_sensors(self):
        return len(self.sensors)

    def observation_matrix(self, sensor_index):
        """All observations of one sensor stacked as a (T, m) array."""
        return np.array(
            [self.observations[t][sensor_index].counts for t in range(self.horizon)]
        )


@dataclass(frozen=True)
class Violation:
    """One broken invariant found by :func:`validate_instance`."""

    objname: str
    index: object
    message: str

    def __str__(self):
        loc = f"{self.objname}[{self.index}]" if self.index is not None else self.objname
        return f"{loc}: {self.message}"


def _check_kernel(violations, objname, kernel):
    neg = np.argwhere(kernel < 0.0)
    for idx in neg:
        violations.append(Violation(objname, tuple(int(k) for k in idx), "negative entry"))
    rowsums = kernel.sum(axis=1)
    bad = np.nonzero(np.abs(rowsums - 1.0) > ROW_SUM_TOL)[0]
    for i in bad:
        violations.append(
            Violation(objname, int(i), f"row sums to {rowsums[i]!r}, expected 1 within {ROW_SUM_TOL}")
        )


def validate_instance(instance):
    """Check every invariant of a :class:`ProblemInstance`.

    Returns a list of :class:`Violation`; the list is empty iff the
    instance is well formed.  Never raises on bad values, only on objects
    that are not a ProblemInstance at all.
    """
    v = []
    prior = instance.prior
    n = prior.n
    total = prior.total()

    for i in np.nonzero(prior.mass < 0.0)[0]:
        v.append(Violation("prior", int(i), "negative mass"))
    if total <= 0.0:
        v.append(Violation("prior", None, "total mass must be positive"))

    kernel = instance.transition.kernel
    if kernel.shape[0] != n:
        v.append(
            Violation("transition", None, f"kernel is {kernel.shape[0]}x{kernel.shape[1]}, prior has {n} states")
        )
    else:
        _check_kernel(v, "transition", kernel)
        zero_rows = np.nonzero(kernel.sum(axis=1) == 0.0)[0]
        for i in zero_rows:
            if prior.mass[i] > 0.0:
                v.append(
                    Violation("transition", int(i), "zero row for a state with positive prior mass")
                )

    if len(instance.sensors) < 1:
        v.append(Violation("sensors", None, "at least one sensor is required"))
    for s, sensor in enumerate(instance.sensors):
        if sensor.n != n:
            v.append(Violation("sensors", s, f"kernel has {sensor.n} rows, prior has {n} states"))
        else:
            _check_kernel(v, f"sensors[{s}]", sensor.kernel)

    if instance.horizon < 1:
        v.append(Violation("horizon", None, "horizon must be >= 1"))
    if len(instance.observations) != instance.horizon:
        v.append(
            Violation(
                "observations",
                None,
                f"grid has {len(instance.observations)} rows, horizon is {instance.horizon}",
            )
        )
    for t, row in enumerate(instance.observations):
        if len(row) != len(instance.sensors):
            v.append(Violation("observations", t, f"expected {len(instance.sensors)} sensors, got {len(row)}"))
            continue
        for s, obs in enumerate(row):
            if s < len(instance.sensors) and obs.m != instance.sensors[s].m:
                v.append(
                    Violation(
                        "observations",
                        (t, s),
                        f"{obs.m} symbols, sensor {s} emits {instance.sensors[s].m}",
                    )
                )
            for k in np.nonzero(obs.counts < 0.0)[0]:
                v.append(Violation("observations", (t, s, int(k)), "negative count"))
            if total > 0.0 and abs(obs.total() - total) > MASS_TOL_REL * total:
                v.append(
                    Violation(
                        "observations",
                        (t, s),
                        f"total {obs.total()!r} does not match ensemble mass {total!r}",
                    )
                )
            if obs.time_index != t + 1:
                v.append(Violation("observations", (t, s), f"time_index {obs.time_index}, expected {t + 1}"))
            if obs.sensor_index != s:
                v.append(Violation("observations", (t, s), f"sensor_index {obs.sensor_index}, expected {s}"))
    return v


def forward_propagate(prior, transition, steps):
    """Propagate the expected distribution ``steps`` times.

    Returns ``[mu_0, A^T mu_0, ..., (A^T)^steps mu_0]`` as Marginals; the
    total mass is conserved at every step.
    """
    if steps < 0:
        raise PreconditionError("steps must be >= 0")
    if transition.n != prior.n:
        raise DimensionMismatchError(
            f"transition kernel is {transition.n}x{transition.n}, prior has {prior.n} states"
        )
    out = [prior]
    mass = prior.mass
    for _ in range(steps):
        mass = transition.kernel.T @ mass
        out.append(Marginal(mass))
    return out

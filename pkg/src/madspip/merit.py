"""Merit function built from a log-barrier on interior constraints and a
quadratic penalty on exterior constraints, sharing one parameter ``rho``.

Inequality constraints are split into two index sets.  Those in the interior
set are aggregated into a single violation measure ``c_int`` and kept strictly
feasible through a thresholded logarithm; the remaining inequalities and all
equalities are penalized quadratically through ``c_ext``.  The merit value is

    z = f - b_int * rho * log(-c_int) + (b_ext / rho) * c_ext

whenever ``c_int < 0`` and ``+inf`` otherwise.  Driving ``rho`` to zero drives
the merit toward ``f`` on points that are strictly interior-feasible and
exterior-feasible, and toward ``+inf`` everywhere else.

All operations here are pure functions of their arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

__all__ = [
    "Partition",
    "MeritParams",
    "ViolationSummary",
    "phi_prox",
    "c_int",
    "c_ext",
    "merit",
    "compute_b_ext",
    "penalty_update_check",
    "violation_summary",
]

_INF = math.inf


@dataclass(frozen=True)
class Partition:
    """Disjoint split of the inequality-constraint indices ``0..m-1``.

    ``g_int`` holds the indices treated by the log barrier, ``g_ext`` the
    indices penalized quadratically.  Together they must cover ``range(m)``.
    """

    g_int: frozenset
    g_ext: frozenset

    def __post_init__(self):
        object.__setattr__(self, "g_int", frozenset(self.g_int))
        object.__setattr__(self, "g_ext", frozenset(self.g_ext))
        if self.g_int & self.g_ext:
            raise ValueError("g_int and g_ext must be disjoint")
        m = len(self.g_int) + len(self.g_ext)
        if (self.g_int | self.g_ext) != frozenset(range(m)):
            raise ValueError("g_int and g_ext must partition range(m)")

    @property
    def m(self) -> int:
        return len(self.g_int) + len(self.g_ext)

    @staticmethod
    def from_initial(g_values: Sequence[float], eps_ext: float) -> "Partition":
        """Partition by the starting point: indices with ``g <= -eps_ext``
        are safely interior and go to ``g_int``, everything else to ``g_ext``.
        """
        g_int = frozenset(i for i, v in enumerate(g_values) if v <= -eps_ext)
        g_ext = frozenset(range(len(g_values))) - g_int
        return Partition(g_int, g_ext)

    def moved_to_interior(self, indices: Iterable[int]) -> "Partition":
        """New partition with ``indices`` moved from g_ext to g_int."""
        moved = frozenset(indices)
        if not moved <= self.g_ext:
            raise ValueError("can only move indices currently in g_ext")
        return Partition(self.g_int | moved, self.g_ext - moved)


@dataclass(frozen=True)
class MeritParams:
    """Penalty-barrier parameter ``rho`` and its scaling constants.

    ``rho`` shrinks by the factor ``theta_rho`` whenever the update criterion
    fires; ``b_int``/``b_ext`` rescale the barrier and penalty terms,
    ``b_rho``/``b_c``/``beta`` relax the update criterion.  The log threshold
    is fixed to 1, which keeps the barrier term nonnegative on [-1, 0).
    """

    rho: float
    b_int: float = 1.0
    b_ext: float = 1.0
    theta_rho: float = 1e-2
    beta: float = 1.0 + 1e-9
    b_rho: float = 10.0
    b_c: float = 1e10
    log_threshold: float = 1.0

    def __post_init__(self):
        if not (self.rho > 0.0):
            raise ValueError("rho must be positive")
        if not (0.0 < self.theta_rho < 1.0):
            raise ValueError("theta_rho must lie in (0, 1)")
        if not (self.beta > 1.0):
            raise ValueError("beta must exceed 1")
        if min(self.b_int, self.b_ext, self.b_rho, self.b_c) <= 0.0:
            raise ValueError("scaling constants must be positive")
        if self.log_threshold != 1.0:
            raise ValueError("log threshold is fixed to 1")


@dataclass(frozen=True)
class ViolationSummary:
    """Violation measures and merit value of one evaluated point.

    ``phi_prox`` is ``-inf`` when no constraint is assigned to the interior
    set (maximum over an empty set).  ``merit`` is ``+inf`` whenever
    ``c_int >= 0`` or the evaluation failed.
    """

    phi_prox: float
    c_int: float
    c_ext: float
    merit: float


def phi_prox(g_int_values: Sequence[float]) -> float:
    """Proximity of a point to the interior-set boundary: max of the values.

    Negative strictly inside, zero on the boundary, positive when some
    interior constraint is violated.  ``+inf`` inputs propagate.
    """
    if len(g_int_values) == 0:
        raise ValueError("phi_prox needs at least one constraint value")
    return max(g_int_values)


def c_int(g_int_values: Sequence[float]) -> float:
    """Aggregated interior violation in ``[-1, +inf)``.

    Equals ``-prod(min(1, -g))`` when every value is nonpositive and the
    proximity measure otherwise.  The empty product makes the no-interior-set
    case identically ``-1``.
    """
    if len(g_int_values) == 0:
        return -1.0
    if any(v > 0.0 for v in g_int_values):
        return phi_prox(g_int_values)
    prod = 1.0
    for v in g_int_values:
        prod *= min(1.0, -v)
    return -prod


def c_ext(g_ext_values: Sequence[float], h_values: Sequence[float]) -> float:
    """Exterior violation: squared positive parts plus squared residuals."""
    total = 0.0
    for v in g_ext_values:
        if v > 0.0:
            total += v * v
    for v in h_values:
        total += v * v
    return total


def merit(f: float, cint: float, cext: float, params: MeritParams) -> float:
    """Merit value of a point given its objective and violation measures.

    ``+inf`` outside the strict interior (``cint >= 0``) and whenever the
    objective itself is ``+inf``; finite otherwise.  NaN never comes out of
    this function: callers sanitize raw outputs to ``+inf`` beforehand.
    """
    if not cint < 0.0:
        return _INF
    if math.isinf(f):
        return _INF
    barrier = params.b_int * params.rho * math.log(-cint)
    return f - barrier + (params.b_ext / params.rho) * cext


def compute_b_ext(f0: float) -> float:
    """Exterior scaling from the objective at the starting point.

    A power of ten matching the order of magnitude of ``|f0|``, floored at 1,
    so the penalty term contributes on the same scale as the objective.
    """
    if not math.isfinite(f0):
        raise ValueError("b_ext needs a finite objective at the starting point")
    if f0 == 0.0:
        return 1.0
    return max(1.0, 10.0 ** math.floor(math.log10(abs(f0))))


def penalty_update_check(
    delta_next: float, phi_prox_val: Optional[float], params: MeritParams
) -> bool:
    """Whether the shrunken frame size is small enough to reduce ``rho``.

    Fires when ``delta_next <= min(b_rho * rho**beta, b_c * phi**2)``.  Meant
    to be called after an unsuccessful iteration only.  With no interior
    constraints pass ``phi_prox_val=None``: the proximity term drops out and
    the criterion reduces to its first argument.
    """
    term_rho = params.b_rho * params.rho**params.beta
    if phi_prox_val is None:
        bound = term_rho
    else:
        bound = min(term_rho, params.b_c * phi_prox_val * phi_prox_val)
    return delta_next <= bound


def violation_summary(
    f: float,
    g: Sequence[float],
    h: Sequence[float],
    partition: Partition,
    params: MeritParams,
    failed: bool = False,
) -> ViolationSummary:
    """Full violation/merit summary of one raw evaluation under a partition.

    Computed on demand from the stored raw outputs; never cache the result,
    since ``rho`` and the partition change while a solver runs.
    """
    if failed:
        return ViolationSummary(phi_prox=_INF, c_int=_INF, c_ext=_INF, merit=_INF)
    g_int_vals = [g[i] for i in sorted(partition.g_int)]
    g_ext_vals = [g[i] for i in sorted(partition.g_ext)]
    cint = c_int(g_int_vals)
    cext = c_ext(g_ext_vals, h)
    phi = max(g_int_vals) if g_int_vals else -_INF
    return ViolationSummary(
        phi_prox=phi, c_int=cint, c_ext=cext, merit=merit(f, cint, cext, params)
    )

"""Brute-force ground truth by full joint enumeration.

Deliberately the inefficient reference: every assignment of the unobserved
variables is scored by direct CPT lookup, with no factor tables, products,
or reductions involved, so it cross-checks the engine rather than repeating
it.  Guarded to 2**24 assignments.  Sorting ties prefer the larger
assignment (variable id order, state-index comparison) -- the same rule the
engine applies -- so sequence comparisons are exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import QueryError
from .mpe import verify_assignment
from .network import Evidence, Network, check_evidence

SIZE_GUARD = 1 << 24


@dataclass(frozen=True)
class JointEntry:
    assignment: dict[int, int]
    probability: float


def _free_vars(net: Network, evidence: Evidence) -> list[int]:
    check_evidence(net, evidence)
    free = [v for v in range(net.n_vars) if v not in evidence]
    size = math.prod(net.card(v) for v in free) if free else 1
    if size > SIZE_GUARD:
        raise QueryError(
            f"{size} assignments exceed the brute-force guard of {SIZE_GUARD}"
        )
    return free


def enumerate_joint(net: Network, evidence: Evidence | None = None):
    """Yield every assignment consistent with the evidence, exactly once,
    with its full joint probability."""
    evidence = dict(evidence or {})
    free = _free_vars(net, evidence)
    ranges = [range(net.card(v)) for v in free]
    for states in itertools.product(*ranges):
        assignment = dict(zip(free, states))
        yield JointEntry(assignment, verify_assignment(net, evidence, assignment))


def _state_columns(net: Network, free: list[int]) -> tuple[np.ndarray, ...]:
    """State of each free variable for every flat assignment index
    (row-major, first variable most significant)."""
    size = math.prod(net.card(v) for v in free) if free else 1
    idx = np.arange(size, dtype=np.int64)
    cols = []
    stride = size
    for v in free:
        stride //= net.card(v)
        cols.append((idx // stride) % net.card(v))
    return tuple(cols)


def _joint_vector(net: Network, evidence: Evidence, free: list[int]) -> np.ndarray:
    """Joint probability of every free assignment, by gathered CPT lookups."""
    cols = dict(zip(free, _state_columns(net, free)))
    size = cols[free[0]].shape[0] if free else 1
    probs = np.ones(size, dtype=np.float64)
    for cpt in net.cpts:
        gather = np.zeros(size, dtype=np.int64)
        for var in cpt.scope:
            state = cols[var] if var in cols else evidence[var]
            gather = gather * net.card(var) + state
        probs = probs * cpt.table[gather]
    return probs


def oracle_top_l(net: Network, evidence: Evidence | None, l: int):
    """The ``l`` most probable assignments by sorting the joint table."""
    if l < 1:
        raise QueryError("l must be at least 1")
    evidence = dict(evidence or {})
    free = _free_vars(net, evidence)
    if not free:
        return [({}, verify_assignment(net, evidence, {}))]
    probs = _joint_vector(net, evidence, free)
    cols = _state_columns(net, free)
    order = np.lexsort(tuple(-c for c in reversed(cols)) + (-probs,))
    out = []
    for flat in order[:l]:
        assignment = {v: int(col[flat]) for v, col in zip(free, cols)}
        out.append((assignment, float(probs[flat])))
    return out


def _phi_marginal(net: Network, phi: list[int], evidence: Evidence):
    free = _free_vars(net, evidence)
    probs = _joint_vector(net, evidence, free)
    cols = dict(zip(free, _state_columns(net, free)))
    size = math.prod(net.card(v) for v in phi)
    gather = np.zeros(probs.shape[0], dtype=np.int64)
    for var in phi:
        gather = gather * net.card(var) + cols[var]
    sums = np.zeros(size, dtype=np.float64)
    np.add.at(sums, gather, probs)
    phi_cols = []
    idx = np.arange(size, dtype=np.int64)
    stride = size
    for var in phi:
        stride //= net.card(var)
        phi_cols.append((idx // stride) % net.card(var))
    return sums, phi_cols


def oracle_map(net: Network, phi, evidence: Evidence | None = None):
    """Reference subset query: sum the joint over the non-target variables,
    then take the maximising target assignment."""
    return oracle_map_top_l(net, phi, evidence, 1)[0]


def oracle_map_top_l(net: Network, phi, evidence: Evidence | None = None, l: int = 1):
    """Top ``l`` target assignments of the summed joint, engine tie-break."""
    evidence = dict(evidence or {})
    phi = sorted(set(phi))
    if not phi:
        raise QueryError("the target set is empty")
    for v in phi:
        if not 0 <= v < net.n_vars:
            raise QueryError(f"unknown variable id {v}")
        if v in evidence:
            raise QueryError(f"target variable {net.variables[v].name!r} is observed")
    sums, phi_cols = _phi_marginal(net, phi, evidence)
    order = np.lexsort(tuple(-c for c in reversed(phi_cols)) + (-sums,))
    out = []
    for flat in order[:l]:
        assignment = {v: int(col[flat]) for v, col in zip(phi, phi_cols)}
        out.append((assignment, float(sums[flat])))
    return out

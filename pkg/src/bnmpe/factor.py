"""Dense factor tables with per-entry argmax tracebacks.

A factor is a table over an ordered scope of discrete variables, stored flat
and indexed mixed-radix with the *first* scope variable most significant.
Every table entry additionally carries the instantiation of each variable
that has been max-reduced out of it so far (its traceback), so the best full
assignment can later be read off without recomputation.

Three primitive operations are provided:

* :func:`conformal_product` -- entrywise product over the union of scopes,
  merging tracebacks,
* :func:`reduce_max` -- eliminate variables by maximisation, extending the
  traceback with the argmax instantiation,
* :func:`sum_out` -- eliminate variables by summation, which requires (and
  asserts) that all combined entries carry identical tracebacks.

In log-space mode values are log-probabilities, products become sums and
``-inf`` is the zero element; comparisons are unchanged.

Factors are immutable after construction; all operations are pure functions
and safe to call concurrently on shared inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FactorInvariantError

_TRACE_DTYPE = np.int32


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Factor:
    """Immutable potential table over an ordered variable scope.

    Attributes:
        scope: variable ids, first id most significant in the flat index.
        cards: cardinalities aligned with ``scope``.
        values: flat table of length ``prod(cards)``.
        trace_vars: variables already max-reduced out of this factor.
        trace_states: per-entry argmax states, shape ``(len(values),
            len(trace_vars))``.
        fixed: states recorded from evidence slicing (never part of the
            traceback).
        log_space: whether ``values`` holds log-probabilities.
    """

    scope: tuple[int, ...]
    cards: tuple[int, ...]
    values: np.ndarray
    trace_vars: tuple[int, ...] = ()
    trace_states: np.ndarray = None  # type: ignore[assignment]
    fixed: dict[int, int] = field(default_factory=dict)
    log_space: bool = False

    def __post_init__(self) -> None:
        size = math.prod(self.cards)
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(size)
        object.__setattr__(self, "values", _freeze(values))
        traces = self.trace_states
        if traces is None:
            traces = np.zeros((size, len(self.trace_vars)), dtype=_TRACE_DTYPE)
        traces = np.ascontiguousarray(traces, dtype=_TRACE_DTYPE)
        if traces.shape != (size, len(self.trace_vars)):
            raise FactorInvariantError(
                f"traceback shape {traces.shape} does not match table "
                f"size {size} x {len(self.trace_vars)}"
            )
        object.__setattr__(self, "trace_states", _freeze(traces))
        if len(set(self.scope)) != len(self.scope):
            raise FactorInvariantError(f"duplicate variable in scope {self.scope}")
        if set(self.trace_vars) & set(self.scope):
            raise FactorInvariantError("traceback variables overlap scope")
        if set(self.trace_vars) & set(self.fixed):
            raise FactorInvariantError("traceback variables overlap fixed context")

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def index_of(self, assignment) -> int:
        """Flat index of the entry selected by ``assignment`` (a mapping that
        must cover the whole scope)."""
        idx = 0
        for var, card in zip(self.scope, self.cards):
            state = assignment[var]
            if not 0 <= state < card:
                raise ValueError(f"state {state} out of range for variable {var}")
            idx = idx * card + state
        return idx

    def assignment_of(self, index: int) -> dict[int, int]:
        """Inverse of :meth:`index_of`."""
        out: dict[int, int] = {}
        for var, card in zip(reversed(self.scope), reversed(self.cards)):
            out[var] = index % card
            index //= card
        return {v: out[v] for v in self.scope}

    def traceback_at(self, index: int) -> dict[int, int]:
        """Traceback of one entry as a plain assignment."""
        row = self.trace_states[index]
        return {v: int(s) for v, s in zip(self.trace_vars, row)}


def unit_factor(log_space: bool = False) -> Factor:
    """The multiplicative identity: empty scope, single entry 1 (0 in logs)."""
    value = 0.0 if log_space else 1.0
    return Factor((), (), np.array([value]), log_space=log_space)


def _sub_index_map(
    out_scope: tuple[int, ...],
    out_cards: tuple[int, ...],
    sub_scope: tuple[int, ...],
    sub_cards: tuple[int, ...],
) -> np.ndarray:
    """Flat index into the sub table for every entry of the out table.

    ``sub_scope`` must be a subset of ``out_scope`` (any order).
    """
    size = math.prod(out_cards)
    if not sub_scope:
        return np.zeros(size, dtype=np.intp)
    pos = {v: i for i, v in enumerate(out_scope)}
    order = sorted(range(len(sub_scope)), key=lambda i: pos[sub_scope[i]])
    arranged = np.arange(math.prod(sub_cards), dtype=np.intp).reshape(sub_cards)
    arranged = arranged.transpose(order)
    member = set(sub_scope)
    shape = tuple(c if v in member else 1 for v, c in zip(out_scope, out_cards))
    return np.broadcast_to(arranged.reshape(shape), out_cards).reshape(-1)


def conformal_product(left: Factor, right: Factor) -> Factor:
    """Entrywise product of two factors over the union of their scopes.

    The result scope is the left scope followed by the right scope's new
    variables.  Tracebacks are merged; their variable sets must be disjoint
    (a collision means a variable was reduced twice -- a malformed plan).
    """
    if left.log_space != right.log_space:
        raise FactorInvariantError("cannot combine log-space with linear factors")
    if set(left.trace_vars) & set(right.trace_vars):
        raise FactorInvariantError(
            "traceback collision: "
            f"{set(left.trace_vars) & set(right.trace_vars)} reduced twice"
        )
    if (set(left.trace_vars) & set(right.scope)) or (
        set(right.trace_vars) & set(left.scope)
    ):
        raise FactorInvariantError("a reduced variable is still live in the other operand")

    left_set = set(left.scope)
    scope = left.scope + tuple(v for v in right.scope if v not in left_set)
    by_var = dict(zip(left.scope, left.cards)) | dict(zip(right.scope, right.cards))
    for var, card in zip(right.scope, right.cards):
        if var in left_set and card != dict(zip(left.scope, left.cards))[var]:
            raise FactorInvariantError(f"cardinality mismatch for variable {var}")
    cards = tuple(by_var[v] for v in scope)

    l_idx = _sub_index_map(scope, cards, left.scope, left.cards)
    r_idx = _sub_index_map(scope, cards, right.scope, right.cards)
    if left.log_space:
        values = left.values[l_idx] + right.values[r_idx]
    else:
        values = left.values[l_idx] * right.values[r_idx]
    traces = np.hstack((left.trace_states[l_idx], right.trace_states[r_idx]))

    fixed = dict(left.fixed)
    for var, state in right.fixed.items():
        if fixed.setdefault(var, state) != state:
            raise FactorInvariantError(f"conflicting fixed states for variable {var}")

    return Factor(
        scope,
        cards,
        values,
        left.trace_vars + right.trace_vars,
        traces,
        fixed,
        left.log_space,
    )


def _split_axes(f: Factor, vars: frozenset[int]):
    keep = [i for i, v in enumerate(f.scope) if v not in vars]
    drop = [i for i, v in enumerate(f.scope) if v in vars]
    out_scope = tuple(f.scope[i] for i in keep)
    out_cards = tuple(f.cards[i] for i in keep)
    drop_cards = tuple(f.cards[i] for i in drop)
    n_out = math.prod(out_cards)
    n_drop = math.prod(drop_cards)
    perm = keep + drop
    vals = f.values.reshape(f.cards).transpose(perm).reshape(n_out, n_drop)
    idxs = np.arange(f.size, dtype=np.intp).reshape(f.cards).transpose(perm)
    return out_scope, out_cards, drop, drop_cards, vals, idxs.reshape(n_out, n_drop)


def reduce_max(f: Factor, vars) -> Factor:
    """Eliminate ``vars`` by maximisation, recording the argmax as traceback.

    Ties break to the largest state-index vector of the eliminated
    variables, compared in scope order: deterministic, and it reproduces the
    instantiations the worked reference example reports at its tied entries.
    """
    vs = frozenset(vars)
    if not vs:
        return f
    if not vs <= set(f.scope):
        raise ValueError(f"variables {vs - set(f.scope)} not in scope {f.scope}")
    out_scope, out_cards, drop, drop_cards, vals, idxs = _split_axes(f, vs)
    # argmax returns the first maximum; scanning reversed picks the last,
    # i.e. the lexicographically largest eliminated state vector.
    arg = vals.shape[1] - 1 - vals[:, ::-1].argmax(axis=1)
    src = idxs[np.arange(vals.shape[0]), arg]
    drop_states = np.stack(np.unravel_index(arg, drop_cards), axis=1)
    traces = np.hstack((f.trace_states[src], drop_states.astype(_TRACE_DTYPE)))
    return Factor(
        out_scope,
        out_cards,
        f.values[src],
        f.trace_vars + tuple(f.scope[i] for i in drop),
        traces,
        dict(f.fixed),
        f.log_space,
    )


def sum_out(f: Factor, vars) -> Factor:
    """Eliminate ``vars`` by summation.

    All entries folded into one output entry must carry identical tracebacks
    (the subset-query scheduler guarantees this; a divergence here means a
    reduction was allowed too early upstream).
    """
    vs = frozenset(vars)
    if not vs:
        return f
    if not vs <= set(f.scope):
        raise ValueError(f"variables {vs - set(f.scope)} not in scope {f.scope}")
    out_scope, out_cards, drop, _, vals, idxs = _split_axes(f, vs)
    if f.log_space:
        values = np.logaddexp.reduce(vals, axis=1)
    else:
        values = vals.sum(axis=1)
    if f.trace_vars:
        blocks = f.trace_states[idxs]  # (n_out, n_drop, n_trace)
        if not (blocks == blocks[:, :1, :]).all():
            raise FactorInvariantError(
                "traceback divergence while summing "
                f"{sorted(vs)}: a reduction upstream was scheduled too early"
            )
        traces = blocks[:, 0, :]
    else:
        traces = None
    return Factor(
        out_scope,
        out_cards,
        values,
        f.trace_vars,
        traces,
        dict(f.fixed),
        f.log_space,
    )


def restrict(f: Factor, var: int, state: int) -> Factor:
    """Slice one variable to a fixed state, removing it from the scope.

    The restriction is recorded in the factor's fixed context, not its
    traceback: sliced variables are observed, not explained.
    """
    if var not in f.scope:
        raise ValueError(f"variable {var} not in scope {f.scope}")
    axis = f.scope.index(var)
    if not 0 <= state < f.cards[axis]:
        raise ValueError(f"state {state} out of range for variable {var}")
    values = np.take(f.values.reshape(f.cards), state, axis=axis).reshape(-1)
    idxs = np.take(
        np.arange(f.size, dtype=np.intp).reshape(f.cards), state, axis=axis
    ).reshape(-1)
    scope = f.scope[:axis] + f.scope[axis + 1 :]
    cards = f.cards[:axis] + f.cards[axis + 1 :]
    return Factor(
        scope,
        cards,
        values,
        f.trace_vars,
        f.trace_states[idxs],
        {**f.fixed, var: state},
        f.log_space,
    )


def sort_scope(f: Factor) -> Factor:
    """Reorder the scope ascending by variable id (canonical form).

    Useful for comparing products built in different association orders.
    """
    scope = tuple(sorted(f.scope))
    if scope == f.scope:
        return f
    cards = tuple(f.cards[f.scope.index(v)] for v in scope)
    src = _sub_index_map(scope, cards, f.scope, f.cards)
    return Factor(
        scope,
        cards,
        f.values[src],
        f.trace_vars,
        f.trace_states[src],
        dict(f.fixed),
        f.log_space,
    )


def format_factor(f: Factor, name_of=None, digits: int = 4) -> str:
    """Render a factor as text, one entry per line, with its tracebacks.

    Example line: ``d(c=0, d=0) = 0.1537 with a=0 b=0 e=0 f=1``.
    """
    if name_of is None:
        name_of = lambda v: f"x{v}"  # noqa: E731
    lines = []
    for idx in range(f.size):
        assign = f.assignment_of(idx)
        head = ", ".join(f"{name_of(v)}={s}" for v, s in assign.items())
        line = f"d({head}) = {f.values[idx]:.{digits}g}"
        trace = f.traceback_at(idx)
        if trace:
            tail = " ".join(f"{name_of(v)}={trace[v]}" for v in sorted(trace))
            line += f" with {tail}"
        lines.append(line)
    return "\n".join(lines)

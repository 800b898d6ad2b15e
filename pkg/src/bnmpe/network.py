"""Discrete Bayesian networks: model types, file parsing, validation, and
evidence application by table slicing.

The network file format is JSON::

    { "variables": [ {"name": "a", "states": ["0", "1"]}, ... ],
      "cpts": [ {"child": "a", "parents": [], "table": [0.8, 0.2]},
                {"child": "d", "parents": ["a", "b"], "table": [...]}, ... ] }

Table ordering: parent configurations iterate with the first listed parent
as the most significant digit and the child state as the fastest-varying
index.

Probabilities are 64-bit floats.  Evidence is applied by slicing each CPT
table before any combination work, so downstream algorithms never see
evidence variables.  All model values are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NetworkFormatError, QueryError
from .factor import Factor, restrict

ROW_SUM_TOLERANCE = 1e-9
VALUE_SLACK = 1e-12

Evidence = dict[int, int]


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    states: tuple[str, ...]

    @property
    def card(self) -> int:
        return len(self.states)


@dataclass(frozen=True, eq=False)
class Cpt:
    """Conditional probability table for one child variable.

    ``table`` is flat, length ``card(child) * prod(card(parents))``, with the
    first parent most significant and the child fastest-varying.
    """

    child: int
    parents: tuple[int, ...]
    table: np.ndarray

    def __post_init__(self) -> None:
        table = np.ascontiguousarray(self.table, dtype=np.float64)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def scope(self) -> tuple[int, ...]:
        return self.parents + (self.child,)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cpt):
            return NotImplemented
        return (
            self.child == other.child
            and self.parents == other.parents
            and self.table.shape == other.table.shape
            and bool((self.table == other.table).all())
        )


@dataclass(frozen=True, eq=False)
class Network:
    variables: tuple[Variable, ...]
    cpts: tuple[Cpt, ...]  # indexed by child id

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return self.variables == other.variables and self.cpts == other.cpts

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def card(self, var: int) -> int:
        return self.variables[var].card

    def var_id(self, name: str) -> int:
        for v in self.variables:
            if v.name == name:
                return v.id
        raise QueryError(f"unknown variable {name!r}")

    def state_index(self, var: int, label: str) -> int:
        states = self.variables[var].states
        try:
            return states.index(label)
        except ValueError:
            raise QueryError(
                f"unknown state {label!r} for variable {self.variables[var].name!r}"
            ) from None

    def children_of(self, var: int) -> list[int]:
        return [c.child for c in self.cpts if var in c.parents]

    def largest_family(self) -> int:
        return max(len(c.parents) + 1 for c in self.cpts)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise NetworkFormatError(message)


def parse_network(text: str) -> Network:
    """Parse and validate a network document.

    Variable ids are assigned in file order.  Raises
    :class:`NetworkFormatError` on malformed documents, cycles, missing or
    duplicate CPTs, bad table arity, out-of-range entries, or rows that do
    not sum to 1 within ``1e-9``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"not valid JSON: {exc}") from exc
    _require(isinstance(doc, dict), "top level must be an object")
    _require(isinstance(doc.get("variables"), list), "missing 'variables' list")
    _require(isinstance(doc.get("cpts"), list), "missing 'cpts' list")
    _require(len(doc["variables"]) > 0, "network has no variables")

    variables: list[Variable] = []
    ids: dict[str, int] = {}
    for i, entry in enumerate(doc["variables"]):
        _require(isinstance(entry, dict), f"variable #{i} must be an object")
        name = entry.get("name")
        states = entry.get("states")
        _require(isinstance(name, str) and name, f"variable #{i} has no name")
        _require(name not in ids, f"duplicate variable name {name!r}")
        _require(
            isinstance(states, list) and len(states) >= 1,
            f"variable {name!r} needs at least one state",
        )
        _require(
            all(isinstance(s, str) for s in states),
            f"variable {name!r} has non-string state labels",
        )
        _require(
            len(set(states)) == len(states),
            f"variable {name!r} has duplicate state labels",
        )
        ids[name] = i
        variables.append(Variable(i, name, tuple(states)))

    by_child: dict[int, Cpt] = {}
    for j, entry in enumerate(doc["cpts"]):
        _require(isinstance(entry, dict), f"cpt #{j} must be an object")
        child_name = entry.get("child")
        _require(child_name in ids, f"cpt #{j}: unknown child {child_name!r}")
        child = ids[child_name]
        _require(child not in by_child, f"duplicate CPT for {child_name!r}")
        parent_names = entry.get("parents", [])
        _require(isinstance(parent_names, list), f"cpt #{j}: parents must be a list")
        for p in parent_names:
            _require(p in ids, f"cpt #{j}: unknown parent {p!r}")
        parents = tuple(ids[p] for p in parent_names)
        _require(len(set(parents)) == len(parents), f"cpt #{j}: repeated parent")
        _require(child not in parents, f"cpt #{j}: {child_name!r} is its own parent")

        table = entry.get("table")
        _require(isinstance(table, list), f"cpt #{j}: table must be a list")
        child_card = variables[child].card
        expected = child_card * math.prod(variables[p].card for p in parents)
        _require(
            len(table) == expected,
            f"cpt for {child_name!r}: table has {len(table)} entries, expected {expected}",
        )
        arr = np.asarray(table, dtype=np.float64)
        _require(
            bool(((arr >= -VALUE_SLACK) & (arr <= 1 + VALUE_SLACK)).all()),
            f"cpt for {child_name!r}: entries must lie in [0, 1]",
        )
        rows = arr.reshape(-1, child_card)
        sums = rows.sum(axis=1)
        _require(
            bool((np.abs(sums - 1.0) <= ROW_SUM_TOLERANCE).all()),
            f"cpt for {child_name!r}: a row sums to {sums[np.abs(sums - 1).argmax()]!r}, not 1",
        )
        by_child[child] = Cpt(child, parents, arr)

    missing = [v.name for v in variables if v.id not in by_child]
    _require(not missing, f"missing CPTs for {missing}")

    # Cycle check (Kahn's algorithm over the parent graph).
    indeg = {v.id: len(by_child[v.id].parents) for v in variables}
    queue = [i for i, d in indeg.items() if d == 0]
    seen = 0
    children: dict[int, list[int]] = {v.id: [] for v in variables}
    for cpt in by_child.values():
        for p in cpt.parents:
            children[p].append(cpt.child)
    while queue:
        node = queue.pop()
        seen += 1
        for c in children[node]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    _require(seen == len(variables), "the parent graph contains a cycle")

    return Network(tuple(variables), tuple(by_child[i] for i in range(len(variables))))


def serialize_network(net: Network) -> str:
    """Canonical JSON for a network; parse(serialize(n)) == n bit-exactly."""
    doc = {
        "variables": [
            {"name": v.name, "states": list(v.states)} for v in net.variables
        ],
        "cpts": [
            {
                "child": net.variables[c.child].name,
                "parents": [net.variables[p].name for p in c.parents],
                "table": c.table.tolist(),
            }
            for c in net.cpts
        ],
    }
    return json.dumps(doc, indent=2)


def load_network(path) -> Network:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_network(handle.read())


def check_evidence(net: Network, evidence: Evidence) -> None:
    for var, state in evidence.items():
        if not 0 <= var < net.n_vars:
            raise QueryError(f"unknown variable id {var}")
        if not 0 <= state < net.card(var):
            raise QueryError(
                f"state {state} out of range for variable {net.variables[var].name!r}"
            )


def cpt_factor(net: Network, child: int, log_space: bool = False) -> Factor:
    """The CPT of ``child`` as a factor with scope (parents..., child)."""
    cpt = net.cpts[child]
    cards = tuple(net.card(v) for v in cpt.scope)
    values = cpt.table
    if log_space:
        with np.errstate(divide="ignore"):
            values = np.log(values)
    return Factor(cpt.scope, cards, values, log_space=log_space)


def apply_evidence(
    net: Network, evidence: Evidence, log_space: bool = False
) -> list[Factor]:
    """One factor per CPT with every observed variable sliced away.

    The sliced variable is removed from the scope and recorded in the
    factor's fixed context.  Unaffected CPTs come back unchanged (as
    factors); fully observed CPTs come back as scalars.
    """
    check_evidence(net, evidence)
    factors = []
    for child in range(net.n_vars):
        f = cpt_factor(net, child, log_space)
        for var in sorted(set(f.scope) & set(evidence)):
            f = restrict(f, var, evidence[var])
        factors.append(f)
    return factors

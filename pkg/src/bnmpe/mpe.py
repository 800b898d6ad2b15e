"""Most probable explanation queries over a factoring plan.

Execution follows the three-step scheme: reduce each leaf factor by its
locally-exclusive variables, combine factors bottom-up along the plan,
max-reducing at every node whose table holds a variable that appears nowhere
else, and finally reduce the root table over its whole scope.  The best
assignment is then read straight off the root traceback.

The full evaluated tree (every intermediate table with its tracebacks) is
kept as an :class:`ExecutionTrace`; the k-best module reinterprets it to
answer next-best queries without recomputation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import QueryError
from .factor import Factor, conformal_product, reduce_max
from .factoring import (
    FactoringStats,
    FactoringTree,
    PlanNode,
    build_factoring,
)
from .network import Evidence, Network, apply_evidence, check_evidence


@dataclass
class TraceNode:
    """One evaluated plan node: the formed table, the eliminations applied
    to it, and the result passed upward."""

    node_id: int
    factor_index: int | None
    children: tuple["TraceNode", ...]
    pre: Factor  # table as formed (leaf factor or conformal product)
    sum_set: frozenset[int]
    mid: Factor  # after summations (== pre for plain MPE)
    reduce_set: frozenset[int]
    post: Factor  # after max-reductions


@dataclass
class ExecutionTrace:
    """Saved intermediate results of one query, root node last."""

    root: TraceNode
    cards: dict[int, int]
    evidence: Evidence
    n_query_vars: int  # non-evidence variables of the query
    log_space: bool
    stats: FactoringStats
    strategy: str


@dataclass
class MpeResult:
    assignment: dict[int, int]
    probability: float
    log_probability: float
    stats: FactoringStats


class _Executor:
    def __init__(self, factors: list[Factor], stats: FactoringStats):
        self.factors = factors
        self.stats = stats
        self.counter = 0

    def run(self, node: PlanNode, is_root: bool) -> TraceNode:
        if node.is_leaf:
            children: tuple[TraceNode, ...] = ()
            pre = self.factors[node.factor_index]
        else:
            left = self.run(node.children[0], False)
            right = self.run(node.children[1], False)
            children = (left, right)
            pre = conformal_product(left.post, right.post)
            self.stats.multiplications += pre.size
        self.stats.max_dimensionality = max(
            self.stats.max_dimensionality, len(pre.scope)
        )
        reduce_set = node.reduce_set
        if is_root:
            reduce_set = reduce_set | set(pre.scope)
        post = reduce_max(pre, reduce_set)
        self.stats.comparisons += pre.size - post.size
        self.counter += 1
        return TraceNode(
            node_id=self.counter,
            factor_index=node.factor_index,
            children=children,
            pre=pre,
            sum_set=frozenset(),
            mid=pre,
            reduce_set=frozenset(reduce_set),
            post=post,
        )


def execute_plan(
    factors: list[Factor], tree: FactoringTree, stats: FactoringStats | None = None
) -> tuple[TraceNode, FactoringStats]:
    """Evaluate a factoring plan bottom-up, reducing the root to a scalar."""
    stats = stats if stats is not None else FactoringStats()
    executor = _Executor(factors, stats)
    root = executor.run(tree.root, True)
    return root, stats


def _fold_scalars(factors: list[Factor]) -> tuple[list[Factor], Factor | None]:
    """Fold evidence-born scalar factors into the first table factor."""
    scalars = [f for f in factors if not f.scope]
    tables = [f for f in factors if f.scope]
    if not scalars:
        return tables, None
    acc = scalars[0]
    for f in scalars[1:]:
        acc = conformal_product(acc, f)
    if not tables:
        return [], acc
    tables[0] = conformal_product(acc, tables[0])
    return tables, None


def find_mpe(
    net: Network,
    evidence: Evidence | None = None,
    strategy: str = "min-degree",
    *,
    log_space: bool = False,
    tree: FactoringTree | None = None,
    early_reduction: bool = True,
) -> tuple[MpeResult, ExecutionTrace]:
    """Best full assignment of the non-evidence variables, with trace.

    ``tree`` overrides the strategy with an explicit plan.  With
    ``early_reduction=False`` all maxing is deferred to the root (used to
    validate that interior reductions are sound).
    """
    evidence = dict(evidence or {})
    check_evidence(net, evidence)
    factors = apply_evidence(net, evidence, log_space)
    factors, all_scalar = _fold_scalars(factors)
    reducible = frozenset(range(net.n_vars)) - set(evidence)
    stats = FactoringStats()

    if not factors:
        # Every variable observed: the answer is the evidence likelihood.
        value = float(all_scalar.values[0])
        root = TraceNode(1, None, (), all_scalar, frozenset(), all_scalar, frozenset(), all_scalar)
        trace = ExecutionTrace(root, {}, evidence, 0, log_space, stats, strategy)
        prob = math.exp(value) if log_space else value
        logp = value if log_space else (math.log(value) if value > 0 else -math.inf)
        return MpeResult({}, prob, logp, stats), trace

    if tree is None:
        tree = build_factoring(factors, reducible, strategy)
    if not early_reduction:
        tree = _strip_annotations(tree)

    root, stats = execute_plan(factors, tree, stats)
    value = float(root.post.values[0])
    assignment = root.post.traceback_at(0)
    assignment = {v: assignment[v] for v in sorted(assignment)}
    if log_space:
        prob, logp = math.exp(value), value
    else:
        prob, logp = value, math.log(value) if value > 0 else -math.inf

    cards = {v: net.card(v) for v in reducible}
    trace = ExecutionTrace(
        root, cards, evidence, len(reducible), log_space, stats, strategy
    )
    return MpeResult(assignment, prob, logp, stats), trace


def _strip_annotations(tree: FactoringTree) -> FactoringTree:
    def bare(node: PlanNode) -> PlanNode:
        if node.is_leaf:
            return PlanNode(factor_index=node.factor_index)
        return PlanNode(children=(bare(node.children[0]), bare(node.children[1])))

    return FactoringTree(bare(tree.root), tree.scopes)


def verify_assignment(net: Network, evidence: Evidence, assignment: dict[int, int]) -> float:
    """Joint probability of ``assignment`` (plus evidence) by direct CPT lookup.

    Independent of the factor machinery; used to cross-check every reported
    result.  ``assignment`` must cover all non-evidence variables.
    """
    check_evidence(net, evidence)
    full = dict(assignment)
    full.update(evidence)
    missing = [v.name for v in net.variables if v.id not in full]
    if missing:
        raise QueryError(f"partial assignment: missing {missing}")
    prob = 1.0
    for cpt in net.cpts:
        idx = 0
        for var in cpt.scope:
            state = full[var]
            if not 0 <= state < net.card(var):
                raise QueryError(
                    f"state {state} out of range for {net.variables[var].name!r}"
                )
            idx = idx * net.card(var) + state
        prob *= float(cpt.table[idx])
    return prob

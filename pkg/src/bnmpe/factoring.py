"""Combination plans: binary trees over factors with elimination annotations.

A plan fixes the order in which factor tables are multiplied together and, at
each node, which variables become eliminable there.  A variable is annotated
at the shallowest node whose subtree contains every factor mentioning it --
the point where it stops appearing "in any other distribution" and its
maximisation (or summation) can no longer be observed from outside.

The quality metric is the maximum dimensionality: the largest number of
variables in any table formed while executing the plan.  Run time is
exponential in this number, so ordering strategies aim to keep it small.

Four strategies ship:

* ``min-degree`` / ``min-fill``: greedy heuristics over the interaction
  graph; the elimination order is converted into a combination tree by
  multiplying, at each eliminated variable, all live factors containing it.
* ``exhaustive``: subset dynamic programming that provably minimises the
  maximum dimensionality; only permitted for at most 8 factors.
* ``file-order``: left-deep combination in input order (baseline).

Plan construction is symbolic -- it never touches table values -- and pure,
so alternative strategies can be evaluated concurrently and compared by
:func:`predict_max_dimensionality`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .errors import QueryError
from .factor import Factor

STRATEGIES = ("min-degree", "min-fill", "exhaustive", "file-order")

EXHAUSTIVE_LIMIT = 8


@dataclass
class PlanNode:
    """One node of a factoring tree: a leaf factor or a conformal product.

    ``reduce_set`` holds the variables to max-reduce immediately after this
    node's table is formed; ``sum_set`` (used by subset queries) the
    variables to sum out first.
    """

    factor_index: int | None = None
    children: tuple["PlanNode", "PlanNode"] | None = None
    reduce_set: frozenset[int] = frozenset()
    sum_set: frozenset[int] = frozenset()

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def leaves(self) -> list[int]:
        if self.is_leaf:
            return [self.factor_index]
        return self.children[0].leaves() + self.children[1].leaves()


@dataclass
class FactoringTree:
    root: PlanNode
    scopes: tuple[tuple[int, ...], ...]  # input factor scopes, by factor index


@dataclass
class FactoringStats:
    """Instrumentation for one executed plan."""

    max_dimensionality: int = 0
    multiplications: int = 0
    comparisons: int = 0


def _interaction_graph(scopes) -> dict[int, set[int]]:
    graph: dict[int, set[int]] = {}
    for scope in scopes:
        for v in scope:
            graph.setdefault(v, set())
        for a, b in itertools.combinations(scope, 2):
            graph[a].add(b)
            graph[b].add(a)
    return graph


def elimination_order(scopes, targets, strategy: str) -> list[int]:
    """Greedy elimination order over the interaction graph.

    ``min-degree`` scores a variable by its current neighbour count,
    ``min-fill`` by the number of edges elimination would add.  Ties break to
    the lowest variable id.
    """
    graph = _interaction_graph(scopes)
    remaining = set(targets) & set(graph)
    order = []
    while remaining:
        if strategy == "min-degree":
            score = lambda v: len(graph[v])  # noqa: E731
        else:

            def score(v):
                nbrs = list(graph[v])
                return sum(
                    1
                    for a, b in itertools.combinations(nbrs, 2)
                    if b not in graph[a]
                )

        best = min(remaining, key=lambda v: (score(v), v))
        order.append(best)
        nbrs = graph.pop(best)
        for n in nbrs:
            graph[n].discard(best)
        for a, b in itertools.combinations(nbrs, 2):
            graph[a].add(b)
            graph[b].add(a)
        remaining.discard(best)
    return order


def _shape_from_order(scopes, order) -> object:
    """Convert an elimination order into a nested-pair combination shape.

    Eliminating a variable multiplies all live factors containing it
    (left-deep, in creation order); the merged factor, minus the variable,
    goes back into the live set.
    """
    live: list[tuple[object, set[int]]] = [
        (i, set(scope)) for i, scope in enumerate(scopes)
    ]
    for var in order:
        hit = [k for k, (_, sc) in enumerate(live) if var in sc]
        if not hit:
            continue
        shape, merged = live[hit[0]]
        for k in hit[1:]:
            shape = (shape, live[k][0])
            merged = merged | live[k][1]
        merged.discard(var)
        live[hit[0]] = (shape, merged)
        for k in reversed(hit[1:]):
            del live[k]
    shape, _ = live[0]
    for node, _ in live[1:]:
        shape = (shape, node)
    return shape


def _shape_exhaustive(scopes, targets) -> object:
    """Minimise the maximum dimensionality by subset dynamic programming."""
    n = len(scopes)
    if n > EXHAUSTIVE_LIMIT:
        raise QueryError(
            f"exhaustive search over {n} factors exceeds the limit of {EXHAUSTIVE_LIMIT}"
        )
    occ: dict[int, int] = {}
    for i, scope in enumerate(scopes):
        for v in scope:
            occ[v] = occ.get(v, 0) | (1 << i)
    union: list[set[int]] = [set() for _ in range(1 << n)]
    for mask in range(1, 1 << n):
        low = mask & -mask
        union[mask] = union[mask ^ low] | set(scopes[low.bit_length() - 1])

    def out_scope(mask: int) -> frozenset[int]:
        # variables still visible outside this subtree
        return frozenset(
            v
            for v in union[mask]
            if not (v in targets and occ[v] & mask == occ[v])
        )

    outs = {mask: out_scope(mask) for mask in range(1, 1 << n)}
    cost: dict[int, int] = {}
    split: dict[int, int] = {}
    for mask in range(1, 1 << n):
        if mask & (mask - 1) == 0:
            cost[mask] = len(scopes[mask.bit_length() - 1])
            continue
        best = None
        best_sub = None
        low = mask & -mask
        sub = (mask - 1) & mask
        while sub:
            if sub & low:  # fix the lowest leaf on the left: avoids mirrored splits
                other = mask ^ sub
                formed = len(outs[sub] | outs[other])
                c = max(cost[sub], cost[other], formed)
                if best is None or c < best:
                    best, best_sub = c, sub
            sub = (sub - 1) & mask
        cost[mask] = best
        split[mask] = best_sub

    def build(mask: int):
        if mask & (mask - 1) == 0:
            return mask.bit_length() - 1
        sub = split[mask]
        return (build(sub), build(mask ^ sub))

    return build((1 << n) - 1)


def _node_from_shape(shape) -> PlanNode:
    if isinstance(shape, int):
        return PlanNode(factor_index=shape)
    left, right = shape
    return PlanNode(children=(_node_from_shape(left), _node_from_shape(right)))


def _annotate(root: PlanNode, scopes, targets) -> None:
    """Attach each target variable's reduce_set at the LCA of its occurrences."""
    occ: dict[int, set[int]] = {}
    for i, scope in enumerate(scopes):
        for v in scope:
            occ.setdefault(v, set()).add(i)

    def descend(node: PlanNode, leaf_sets: dict[int, frozenset[int]]) -> frozenset[int]:
        if node.is_leaf:
            below = frozenset({node.factor_index})
        else:
            below = descend(node.children[0], leaf_sets) | descend(
                node.children[1], leaf_sets
            )
        leaf_sets[id(node)] = below
        return below

    leaf_sets: dict[int, frozenset[int]] = {}
    descend(root, leaf_sets)

    for var in sorted(set(targets) & set(occ)):
        node = root
        needed = occ[var]
        while not node.is_leaf:
            l, r = node.children
            if needed <= leaf_sets[id(l)]:
                node = l
            elif needed <= leaf_sets[id(r)]:
                node = r
            else:
                break
        node.reduce_set = node.reduce_set | {var}


def tree_from_shape(factors: list[Factor], shape, reducible) -> FactoringTree:
    """Build an annotated tree from an explicit nested-pair shape.

    ``shape`` nests factor indices, e.g. ``(((0, 2), (1, 3)), (4, 5))``.
    """
    scopes = tuple(f.scope for f in factors)
    root = _node_from_shape(shape)
    used = sorted(root.leaves())
    if used != list(range(len(factors))):
        raise ValueError(f"shape must use each factor index exactly once, got {used}")
    _annotate(root, scopes, frozenset(reducible))
    return FactoringTree(root, scopes)


def build_factoring(
    factors: list[Factor],
    reducible,
    strategy: str = "min-degree",
    annotate: bool = True,
) -> FactoringTree:
    """Build a combination plan whose reduce_sets partition ``reducible``.

    ``reducible`` must be a subset of the union of factor scopes.  With
    ``annotate=False`` the tree shape is returned bare (subset queries
    schedule their own eliminations).
    """
    if not factors:
        raise ValueError("no factors to combine")
    reducible = frozenset(reducible)
    scopes = tuple(f.scope for f in factors)
    present = set().union(*(set(s) for s in scopes)) if scopes else set()
    if not reducible <= present:
        raise ValueError(
            f"reducible variables {sorted(reducible - present)} appear in no factor"
        )
    if strategy not in STRATEGIES:
        raise QueryError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")

    if len(factors) == 1:
        root = PlanNode(factor_index=0)
        if annotate:
            root.reduce_set = reducible
        return FactoringTree(root, scopes)

    if strategy == "file-order":
        shape: object = 0
        for i in range(1, len(factors)):
            shape = (shape, i)
    elif strategy == "exhaustive":
        shape = _shape_exhaustive(scopes, reducible)
    else:
        order = elimination_order(scopes, reducible, strategy)
        shape = _shape_from_order(scopes, order)

    root = _node_from_shape(shape)
    if annotate:
        _annotate(root, scopes, reducible)
    return FactoringTree(root, scopes)


def predict_max_dimensionality(tree: FactoringTree) -> int:
    """Largest table dimensionality the plan will form, computed symbolically.

    Counts leaf tables as well as conformal products, so the value is always
    at least the widest input factor; it equals the instrumented maximum
    observed during execution.
    """
    best = 0

    def walk(node: PlanNode) -> frozenset[int]:
        nonlocal best
        if node.is_leaf:
            formed = frozenset(tree.scopes[node.factor_index])
        else:
            formed = walk(node.children[0]) | walk(node.children[1])
        best = max(best, len(formed))
        return formed - node.reduce_set - node.sum_set

    walk(tree.root)
    return best

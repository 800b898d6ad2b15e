"""Best explanations over a subset of variables (mixed sum/max elimination).

A subset query asks for the most probable assignment of target variables
``phi``, with everything else marginalised away.  Three stages:

1. Relevance pruning: barren descendants are dropped (they sum to one), each
   observed variable cuts the arcs to its children, and only the factors
   connected to the targets are kept.  Evidence-bearing fragments that fall
   off are not discarded outright: their total mass is summed to a scalar
   and multiplied back in, so reported probabilities always match the full
   joint.
2. Scheduled elimination: factors combine along an ordering plan; after each
   table is formed, any summable variable confined to it is summed out
   (occurrence test), and any target variable confined to a table whose
   other variables are all targets is max-reduced.  Summation is always
   applied before reduction on the same table -- reducing first could let a
   later summation cross an argmax choice, which is exactly what the
   occurrence tests forbid.
3. For ranked queries, each reduction records a gain table: the content of
   its input with the previously reduced subtrees' contributions stripped
   to ones.  Because a reduced table's surviving variables are all targets,
   summations never straddle them, and the target marginal factorises
   exactly over these gains.  Running the ordinary next-best machinery on
   the gain product therefore enumerates target assignments by marginal
   probability; summed variables contribute no candidate streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import QueryError
from .factor import Factor, conformal_product, reduce_max, restrict, sum_out
from .factoring import FactoringStats, PlanNode, build_factoring, elimination_order
from .kbest import KBestResult, build_eval_tree, next_mpe
from .mpe import ExecutionTrace, TraceNode
from .network import Evidence, Network, check_evidence, cpt_factor


@dataclass(frozen=True)
class QueryPartition:
    """How a subset query splits the network: targets, variables to sum,
    the relevant set, and the evidence."""

    phi: frozenset[int]
    sigma: frozenset[int]
    relevant: frozenset[int]
    evidence: dict[int, int]


@dataclass
class _PhiNode:
    """One recorded reduction: its gain table, the variables it chose, and
    the reductions absorbed below it."""

    gain: Factor
    reduce_vars: frozenset[int]
    children: tuple["_PhiNode", ...]


@dataclass
class MapResult:
    assignment: dict[int, int]
    probability: float
    log_probability: float
    partition: QueryPartition
    stats: FactoringStats
    trace: ExecutionTrace
    events: list[tuple[int, str, frozenset[int]]]  # (node_id, kind, variables)
    mass: float = 1.0  # likelihood of evidence fragments pruned away
    phi_root: _PhiNode | None = field(default=None, repr=False)


def lemma1_applicable(var: int, live_scopes) -> bool:
    """A summable variable may be summed out once it occurs in exactly one
    live distribution."""
    return sum(1 for scope in live_scopes if var in scope) == 1


def lemma2_applicable(var: int, live_scopes, phi) -> bool:
    """A target variable may be max-reduced once it occurs in exactly one
    live distribution and every other variable of that distribution is a
    target (so no later summation can cross the argmax)."""
    hits = [scope for scope in live_scopes if var in scope]
    return len(hits) == 1 and all(v in phi for v in hits[0] if v != var)


def _barren_prune(net: Network, phi: frozenset[int], evidence: Evidence) -> set[int]:
    """Drop variables with no influence path to the query: repeatedly remove
    childless non-target, non-evidence nodes (their CPTs sum to one)."""
    remaining = set(range(net.n_vars))
    child_count = {v: 0 for v in remaining}
    for cpt in net.cpts:
        for p in cpt.parents:
            child_count[p] += 1
    queue = [
        v for v in remaining if child_count[v] == 0 and v not in phi and v not in evidence
    ]
    while queue:
        v = queue.pop()
        remaining.discard(v)
        for p in net.cpts[v].parents:
            child_count[p] -= 1
            if child_count[p] == 0 and p not in phi and p not in evidence:
                queue.append(p)
    return remaining


def _components(scopes) -> list[int]:
    """Union-find over factor indices sharing variables; returns a root
    label per factor."""
    parent = list(range(len(scopes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[int, int] = {}
    for i, scope in enumerate(scopes):
        for v in scope:
            if v in owner:
                ri, rv = find(i), find(owner[v])
                if ri != rv:
                    parent[max(ri, rv)] = min(ri, rv)
            else:
                owner[v] = i
    return [find(i) for i in range(len(scopes))]


def _check_phi(net: Network, phi, evidence: Evidence) -> frozenset[int]:
    phi = frozenset(phi)
    if not phi:
        raise QueryError("the target set is empty")
    for v in phi:
        if not 0 <= v < net.n_vars:
            raise QueryError(f"unknown variable id {v}")
    overlap = phi & set(evidence)
    if overlap:
        names = sorted(net.variables[v].name for v in overlap)
        raise QueryError(f"target variables {names} are observed")
    return phi


def _partition_factors(net, phi, evidence, log_space):
    """Split the surviving CPT factors into the target-connected part and
    the evidence-bearing fragments that fall off.

    Returns (main child ids, main sliced factors, side sliced factors).
    Connectivity is taken over the sliced scopes, so an observed node links
    to its parents (through its own CPT) but no longer to its children.
    """
    kept = sorted(_barren_prune(net, phi, evidence))
    factors = []
    for child in kept:
        f = cpt_factor(net, child, log_space)
        for var in sorted(set(f.scope) & set(evidence)):
            f = restrict(f, var, evidence[var])
        factors.append(f)
    roots = _components([f.scope for f in factors])
    phi_roots = {roots[i] for i, f in enumerate(factors) if set(f.scope) & phi}
    main_ids, main, side = [], [], []
    for i, f in enumerate(factors):
        if f.scope and roots[i] in phi_roots:
            main_ids.append(kept[i])
            main.append(f)
        else:
            side.append(f)
    return main_ids, main, side


def relevant_set(net: Network, phi, evidence: Evidence | None = None) -> frozenset[int]:
    """The relevant set T: every variable mentioned by a CPT that survives
    barren pruning and stays connected to the targets after evidence cuts.
    Observed parents stay in T (their states index the kept tables); their
    severed ancestors do not."""
    evidence = dict(evidence or {})
    check_evidence(net, evidence)
    phi = _check_phi(net, phi, evidence)
    main_ids, _, _ = _partition_factors(net, phi, evidence, False)
    relevant: set[int] = set()
    for child in main_ids:
        relevant.update(net.cpts[child].scope)
    return frozenset(relevant)


def _sum_to_scalar(factors: list[Factor], log_space: bool) -> float:
    """Total mass of a factor set: sum out every variable."""
    acc = 0.0 if log_space else 1.0

    def fold(value: float) -> None:
        nonlocal acc
        acc = acc + value if log_space else acc * value

    live = [f for f in factors if f.scope]
    for f in factors:
        if not f.scope:
            fold(float(f.values[0]))
    scopes = [f.scope for f in live]
    every = set().union(*(set(s) for s in scopes)) if scopes else set()
    for var in elimination_order(scopes, every, "min-degree"):
        hit = [f for f in live if var in f.scope]
        merged = hit[0]
        for f in hit[1:]:
            merged = conformal_product(merged, f)
        merged = sum_out(merged, {var})
        live = [f for f in live if var not in f.scope]
        if merged.scope:
            live.append(merged)
        else:
            fold(float(merged.values[0]))
    for f in live:
        fold(float(f.values[0]))
    return acc


class _Live:
    __slots__ = ("factor", "gain", "pending")

    def __init__(self, factor, gain, pending):
        self.factor = factor
        self.gain = gain
        self.pending = pending


def _ones_like(f: Factor) -> Factor:
    fill = 0.0 if f.log_space else 1.0
    return Factor(f.scope, f.cards, np.full(f.size, fill), log_space=f.log_space)


class _MapExecutor:
    """Walks the combination plan, applying the occurrence-gated sums and
    reductions to every freshly formed table, and records gain tables."""

    def __init__(self, factors, phi, sigma, stats):
        self.factors = factors
        self.phi = phi
        self.sigma = sigma
        self.stats = stats
        self.counts: dict[int, int] = {}
        for f in factors:
            for v in f.scope:
                self.counts[v] = self.counts.get(v, 0) + 1
        self.counter = 0
        self.events: list[tuple[int, str, frozenset[int]]] = []

    def run(self, plan: PlanNode) -> tuple[TraceNode, _Live]:
        if plan.is_leaf:
            children: tuple[TraceNode, ...] = ()
            f = self.factors[plan.factor_index]
            live = _Live(f, f, ())
        else:
            lnode, llive = self.run(plan.children[0])
            rnode, rlive = self.run(plan.children[1])
            children = (lnode, rnode)
            pre = conformal_product(llive.factor, rlive.factor)
            self.stats.multiplications += pre.size
            for v in set(llive.factor.scope) & set(rlive.factor.scope):
                self.counts[v] -= 1
            live = _Live(
                pre,
                conformal_product(llive.gain, rlive.gain),
                llive.pending + rlive.pending,
            )
        self.counter += 1
        node_id = self.counter
        pre = live.factor
        self.stats.max_dimensionality = max(
            self.stats.max_dimensionality, len(pre.scope)
        )

        # Lemma order on one table: sums strictly before reductions.
        sums = frozenset(
            v for v in pre.scope if v in self.sigma and self.counts[v] == 1
        )
        if sums:
            live.factor = sum_out(live.factor, sums)
            live.gain = sum_out(live.gain, sums)
            for v in sums:
                del self.counts[v]
            self.events.append((node_id, "sum", sums))
        mid = live.factor

        reduces: frozenset[int] = frozenset()
        scope = set(mid.scope)
        if scope and scope <= self.phi:
            reduces = frozenset(v for v in scope if self.counts[v] == 1)
        if reduces:
            phinode = _PhiNode(live.gain, reduces, live.pending)
            live.factor = reduce_max(mid, reduces)
            self.stats.comparisons += mid.size - live.factor.size
            live.gain = _ones_like(live.factor)
            live.pending = (phinode,)
            for v in reduces:
                del self.counts[v]
            self.events.append((node_id, "reduce", reduces))

        node = TraceNode(
            node_id=node_id,
            factor_index=plan.factor_index,
            children=children,
            pre=pre,
            sum_set=sums,
            mid=mid,
            reduce_set=reduces,
            post=live.factor,
        )
        return node, live


def find_map(
    net: Network,
    phi,
    evidence: Evidence | None = None,
    strategy: str = "min-degree",
    *,
    log_space: bool = False,
) -> MapResult:
    """Most probable assignment of the target variables.

    The probability is the maximum over target assignments of the sum over
    all remaining variables of the joint (evidence included), matching
    brute-force marginalisation of the full joint.  The degenerate case
    ``phi = all non-evidence variables`` coincides with the plain best
    explanation.
    """
    evidence = dict(evidence or {})
    check_evidence(net, evidence)
    phi = _check_phi(net, phi, evidence)
    main_ids, main, side = _partition_factors(net, phi, evidence, log_space)

    relevant: set[int] = set()
    for child in main_ids:
        relevant.update(net.cpts[child].scope)
    query_vars = {v for f in main for v in f.scope}
    sigma = frozenset(query_vars - phi)
    partition = QueryPartition(phi, sigma, frozenset(relevant), dict(evidence))

    mass = _sum_to_scalar(side, log_space)
    stats = FactoringStats()
    plan = build_factoring(main, phi | sigma, strategy, annotate=False)
    executor = _MapExecutor(main, phi, sigma, stats)
    root, live = executor.run(plan.root)
    assert not live.factor.scope, "elimination did not finish at the root"

    value = float(live.factor.values[0])
    total = value + mass if log_space else value * mass
    assignment = live.factor.traceback_at(0)
    assert set(assignment) == set(phi)
    assignment = {v: assignment[v] for v in sorted(assignment)}
    if log_space:
        prob, logp = math.exp(total), total
    else:
        prob, logp = total, math.log(total) if total > 0 else -math.inf

    cards = {v: net.card(v) for v in query_vars}
    trace = ExecutionTrace(
        root, cards, evidence, net.n_vars - len(evidence), log_space, stats, strategy
    )
    return MapResult(
        assignment,
        prob,
        logp,
        partition,
        stats,
        trace,
        executor.events,
        mass,
        live.pending[0] if live.pending else None,
    )


def _scale(f: Factor, mass: float) -> Factor:
    values = f.values + mass if f.log_space else f.values * mass
    return Factor(f.scope, f.cards, values, log_space=f.log_space)


def _synthetic_trace(result: MapResult) -> ExecutionTrace:
    """Rebuild the reduction skeleton over gain tables as a plain max-product
    trace, so the standard next-best machinery can enumerate target
    assignments by marginal probability."""
    counter = 0
    mass = result.mass
    identity = 0.0 if result.trace.log_space else 1.0

    def build(phinode: _PhiNode, fold_mass: bool) -> TraceNode:
        nonlocal counter
        gain = _scale(phinode.gain, mass) if fold_mass and mass != identity else phinode.gain
        counter += 1
        current = TraceNode(counter, None, (), gain, frozenset(), gain, frozenset(), gain)
        for child in phinode.children:
            child_node = build(child, False)
            pre = conformal_product(current.post, child_node.post)
            counter += 1
            current = TraceNode(
                counter, None, (current, child_node), pre, frozenset(), pre, frozenset(), pre
            )
        current.reduce_set = phinode.reduce_vars
        current.post = reduce_max(current.pre, phinode.reduce_vars)
        return current

    assert result.phi_root is not None
    root = build(result.phi_root, True)
    assert not root.post.scope
    cards = {v: result.trace.cards[v] for v in result.partition.phi}
    return ExecutionTrace(
        root,
        cards,
        result.trace.evidence,
        result.trace.n_query_vars,
        result.trace.log_space,
        result.stats,
        result.trace.strategy,
    )


def find_l_map(
    net: Network,
    phi,
    evidence: Evidence | None = None,
    l: int = 1,
    strategy: str = "min-degree",
    *,
    log_space: bool = False,
) -> KBestResult:
    """The ``l`` most probable target assignments, non-increasing in marginal
    probability.  Candidates total the product of the target cardinalities;
    with no evidence their probabilities sum to the relevant-set mass."""
    if l < 1:
        raise QueryError("l must be at least 1")
    result = find_map(net, phi, evidence, strategy, log_space=log_space)
    trace = _synthetic_trace(result)
    tree = build_eval_tree(trace)
    marks = tree.new_marks()
    first = marks.post_get(tree.root, (), 1)
    value = math.exp(first.value) if log_space else first.value
    items = [(dict(zip(tree.covered, first.extension)), value)]
    visits: list[int] = []
    while len(items) < l:
        step = next_mpe(tree, marks)
        if step is None:
            break
        assignment, probability, visit_count = step
        items.append((assignment, probability))
        visits.append(visit_count)
    return KBestResult(
        items, visits, len(items) == tree.total, tree.total, result.stats, log_space
    )

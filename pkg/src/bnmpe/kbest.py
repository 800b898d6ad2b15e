"""Next-best explanation queries over a saved execution trace.

The trace of a best-explanation run is reinterpreted as an evaluation tree.
Every reduction node serves, per instantiation of its remaining scope, a
stream of candidates enumerating its reduced variables in non-increasing
value order; every conformal-product node merges its two child streams
through a rank-pair lattice.  Subtrees that contain no reduction carry no
alternatives, so they are never duplicated: their single value is read
straight from the saved tables, exactly as the parent already saw it.

Stream state is held apart from the tree in a :class:`MarkState`: per node
and per instantiation context, the ranks consumed so far (integers at
reduction nodes, integer pairs at product nodes).  Each query refreshes at
most one stale rank per stream, so the number of stream visits per query is
at most ``2n - 1`` for ``n`` query variables -- one reduction node per
variable plus the product nodes between them.  The visit bound is asserted
on every call.

Candidate streams are single-consumer; independent mark states over the same
(immutable) trace may be driven concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import QueryError
from .factoring import FactoringStats, FactoringTree
from .mpe import ExecutionTrace, MpeResult, TraceNode, find_mpe
from .network import Evidence, Network


def gen_next(rank: int, domain_size: int) -> int:
    """Successor of a consumed rank: ``rank + 1``, or 0 once exhausted."""
    if not 1 <= rank <= domain_size:
        raise ValueError(f"rank {rank} outside domain 1..{domain_size}")
    nxt = rank + 1
    return nxt if nxt <= domain_size else 0


def gen_next_pair(
    current: tuple[int, int],
    marked: set[tuple[int, int]],
    bounds: tuple[int, int],
) -> set[tuple[int, int]]:
    """New admissible rank pairs after consuming ``current``.

    ``(i, j+1)`` is generated only if ``(i-1, j+1)`` exists, ``(i+1, j)``
    only if ``(i+1, j-1)`` exists; pairs with a zero coordinate exist by
    definition, the rest must already be marked (consumed).  Because a pair
    has exactly two predecessors, it is generated exactly once: by whichever
    predecessor is consumed last.
    """
    i, j = current

    def exists(a: int, b: int) -> bool:
        return a == 0 or b == 0 or (a, b) in marked

    out: set[tuple[int, int]] = set()
    if j + 1 <= bounds[1] and exists(i - 1, j + 1):
        out.add((i, j + 1))
    if i + 1 <= bounds[0] and exists(i + 1, j - 1):
        out.add((i + 1, j))
    return out


class RankedCandidate(NamedTuple):
    """A ranked alternative served by a subtree: its value and the partial
    assignment (over the subtree's reduced variables, sorted by id) that
    produces it."""

    value: float
    extension: tuple[int, ...]


def _better(a: RankedCandidate, b: RankedCandidate) -> bool:
    """Value first; exact value ties break to the lexicographically larger
    extension, mirroring the reduction tie-break and the oracle ordering."""
    return a.value > b.value or (a.value == b.value and a.extension > b.extension)


def _strides(cards: tuple[int, ...]) -> tuple[int, ...]:
    out = [1] * len(cards)
    for i in range(len(cards) - 2, -1, -1):
        out[i] = out[i + 1] * cards[i + 1]
    return tuple(out)


def _argsort(vars: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(sorted(range(len(vars)), key=lambda i: vars[i]))


class _EvalNode:
    """Precomputed index arithmetic for one trace node."""

    def __init__(self, tn: TraceNode, cards: dict[int, int], children):
        if tn.sum_set:
            raise ValueError("next-best queries require a summation-free trace")
        self.tn = tn
        self.children = children
        pre, post = tn.pre, tn.post
        self.log_space = pre.log_space

        self.reduce_vars = tuple(v for v in pre.scope if v in tn.reduce_set)
        pre_card = dict(zip(pre.scope, pre.cards))
        self.block_cards = tuple(pre_card[v] for v in self.reduce_vars)
        self.block_size = math.prod(self.block_cards)

        self.covered_pre = tuple(sorted(pre.trace_vars))
        self.covered_post = tuple(sorted(set(self.covered_pre) | set(self.reduce_vars)))
        self.count_pre = math.prod(cards[v] for v in self.covered_pre)
        self.count_post = self.count_pre * self.block_size

        self.pre_strides = _strides(pre.cards)
        self.post_strides = _strides(post.cards)
        self.post_pos_in_pre = tuple(pre.scope.index(v) for v in post.scope)
        self.reduce_pos_in_pre = tuple(pre.scope.index(v) for v in self.reduce_vars)
        self.pre_trace_perm = _argsort(pre.trace_vars)
        self.post_trace_perm = _argsort(post.trace_vars)

        # covered_post entry <- deeper extension (covered_pre order) or block state
        reduce_set = set(self.reduce_vars)
        self.post_merge = tuple(
            (True, self.reduce_vars.index(v)) if v in reduce_set
            else (False, self.covered_pre.index(v))
            for v in self.covered_post
        )
        if children:
            left, right = children
            in_left = set(left.covered_post)
            self.pre_merge = tuple(
                (True, left.covered_post.index(v)) if v in in_left
                else (False, right.covered_post.index(v))
                for v in self.covered_pre
            )
            self.child_ctx_pos = (
                tuple(pre.scope.index(v) for v in left.tn.post.scope),
                tuple(pre.scope.index(v) for v in right.tn.post.scope),
            )

    # -- flat indices ------------------------------------------------------
    def pre_flat(self, pre_ctx: tuple[int, ...]) -> int:
        return sum(s * w for s, w in zip(pre_ctx, self.pre_strides))

    def post_flat(self, post_ctx: tuple[int, ...]) -> int:
        return sum(s * w for s, w in zip(post_ctx, self.post_strides))

    def block_states(self, flat: int) -> tuple[int, ...]:
        out = []
        for card in reversed(self.block_cards):
            out.append(flat % card)
            flat //= card
        return tuple(reversed(out))

    def pre_index(self, post_ctx, block: tuple[int, ...]) -> int:
        idx = sum(
            post_ctx[k] * self.pre_strides[p]
            for k, p in enumerate(self.post_pos_in_pre)
        )
        return idx + sum(
            block[k] * self.pre_strides[p]
            for k, p in enumerate(self.reduce_pos_in_pre)
        )

    def pre_ctx_of(self, post_ctx, block: tuple[int, ...]) -> tuple[int, ...]:
        states = [0] * len(self.tn.pre.scope)
        for k, p in enumerate(self.post_pos_in_pre):
            states[p] = post_ctx[k]
        for k, p in enumerate(self.reduce_pos_in_pre):
            states[p] = block[k]
        return tuple(states)

    def child_ctx(self, pre_ctx, side: int) -> tuple[int, ...]:
        return tuple(pre_ctx[p] for p in self.child_ctx_pos[side])

    # -- extensions --------------------------------------------------------
    def pre_trace_ext(self, flat: int) -> tuple[int, ...]:
        row = self.tn.pre.trace_states[flat]
        return tuple(int(row[i]) for i in self.pre_trace_perm)

    def post_trace_ext(self, flat: int) -> tuple[int, ...]:
        row = self.tn.post.trace_states[flat]
        return tuple(int(row[i]) for i in self.post_trace_perm)

    def reduce_ext(self, deep: tuple[int, ...], block: tuple[int, ...]):
        return tuple(
            block[i] if from_block else deep[i]
            for from_block, i in self.post_merge
        )

    def merge_ext(self, left: tuple[int, ...], right: tuple[int, ...]):
        return tuple(
            left[i] if from_left else right[i] for from_left, i in self.pre_merge
        )


class _ReduceStream:
    """Candidate stream of one reduction node for one remaining-scope
    context: a lazy merge across the instantiations of the reduced block,
    with one consumed-rank mark per instantiation."""

    def __init__(self, node: _EvalNode, ctx: tuple[int, ...]):
        self.node = node
        self.ctx = ctx
        pre = node.tn.pre
        self.heads: list[RankedCandidate | None] = []
        self.blocks: list[tuple[int, ...]] = []
        self.src_rank = [1] * node.block_size
        for flat in range(node.block_size):
            block = node.block_states(flat)
            idx = node.pre_index(ctx, block)
            ext = node.reduce_ext(node.pre_trace_ext(idx), block)
            self.heads.append(RankedCandidate(float(pre.values[idx]), ext))
            self.blocks.append(block)
        best = self._best()
        self.consumed: list[RankedCandidate] = [self.heads[best]]
        self.stale: int | None = best

    def _best(self) -> int:
        best = -1
        for i, head in enumerate(self.heads):
            if head is None:
                continue
            if best < 0 or _better(head, self.heads[best]):
                best = i
        return best

    def advance(self, marks: "MarkState") -> RankedCandidate | None:
        marks.visits += 1
        node = self.node
        if self.stale is not None:
            src, self.stale = self.stale, None
            nxt = gen_next(self.src_rank[src], node.count_pre)
            if nxt == 0:
                self.heads[src] = None
            else:
                self.src_rank[src] = nxt
                block = self.blocks[src]
                deep = marks.pre_get(node, node.pre_ctx_of(self.ctx, block), nxt)
                assert deep is not None, "source exhausted before its domain bound"
                self.heads[src] = RankedCandidate(
                    deep.value, node.reduce_ext(deep.extension, block)
                )
        best = self._best()
        if best < 0:
            return None
        cand = self.heads[best]
        self.consumed.append(cand)
        self.stale = best
        return cand

    def get(self, marks: "MarkState", rank: int) -> RankedCandidate | None:
        while len(self.consumed) < rank:
            if self.advance(marks) is None:
                return None
        return self.consumed[rank - 1]


class _ProductStream:
    """Candidate stream of one conformal-product node for one context: a
    rank-pair lattice over the two child streams.  Values already fetched
    for one coordinate are memoized in the child streams, so a new pair
    costs at most one fresh query per child."""

    def __init__(self, node: _EvalNode, ctx: tuple[int, ...]):
        self.node = node
        self.ctx = ctx
        idx = node.pre_flat(ctx)
        first = RankedCandidate(float(node.tn.pre.values[idx]), node.pre_trace_ext(idx))
        self.consumed: list[RankedCandidate] = [first]
        self.consumed_pairs: set[tuple[int, int]] = {(1, 1)}
        self.frontier: dict[tuple[int, int], RankedCandidate] = {}
        self.stale: tuple[int, int] | None = (1, 1)
        left, right = node.children
        self.bounds = (left.count_post, right.count_post)
        self.left_ctx = node.child_ctx(ctx, 0)
        self.right_ctx = node.child_ctx(ctx, 1)

    def advance(self, marks: "MarkState") -> RankedCandidate | None:
        marks.visits += 1
        node = self.node
        left, right = node.children
        if self.stale is not None:
            pair, self.stale = self.stale, None
            for p in gen_next_pair(pair, self.consumed_pairs, self.bounds):
                lc = marks.post_get(left, self.left_ctx, p[0])
                rc = marks.post_get(right, self.right_ctx, p[1])
                assert lc is not None and rc is not None
                value = lc.value + rc.value if node.log_space else lc.value * rc.value
                self.frontier[p] = RankedCandidate(
                    value, node.merge_ext(lc.extension, rc.extension)
                )
        if not self.frontier:
            return None
        best_pair = None
        for p, cand in self.frontier.items():
            if best_pair is None or _better(cand, self.frontier[best_pair]):
                best_pair = p
        cand = self.frontier.pop(best_pair)
        self.consumed_pairs.add(best_pair)
        self.consumed.append(cand)
        self.stale = best_pair
        return cand

    def get(self, marks: "MarkState", rank: int) -> RankedCandidate | None:
        while len(self.consumed) < rank:
            if self.advance(marks) is None:
                return None
        return self.consumed[rank - 1]


class MarkState:
    """All consumed-rank marks of one enumeration, keyed by node and
    context.  Single consumer: share the tree, not the marks."""

    def __init__(self, tree: "EvalTree"):
        self.tree = tree
        self.streams: dict[tuple, object] = {}
        self.visits = 0
        self.produced = 0

    def _stream(self, node: _EvalNode, layer: str, ctx: tuple[int, ...]):
        key = (node.tn.node_id, layer, ctx)
        stream = self.streams.get(key)
        if stream is None:
            cls = _ReduceStream if layer == "reduce" else _ProductStream
            stream = cls(node, ctx)
            self.streams[key] = stream
        return stream

    def post_get(self, node: _EvalNode, ctx, rank: int) -> RankedCandidate | None:
        """Rank within the node's full candidate stream (after reduction)."""
        if rank > node.count_post:
            return None
        if node.count_post == 1:
            idx = node.post_flat(ctx)
            return RankedCandidate(
                float(node.tn.post.values[idx]), node.post_trace_ext(idx)
            )
        layer = "reduce" if node.reduce_vars else "product"
        return self._stream(node, layer, ctx).get(self, rank)

    def pre_get(self, node: _EvalNode, pre_ctx, rank: int) -> RankedCandidate | None:
        """Rank within the node's pre-reduction stream (one block entry)."""
        if rank > node.count_pre:
            return None
        if node.count_pre == 1:
            idx = node.pre_flat(pre_ctx)
            return RankedCandidate(
                float(node.tn.pre.values[idx]), node.pre_trace_ext(idx)
            )
        return self._stream(node, "product", pre_ctx).get(self, rank)


class EvalTree:
    """Rearranged execution trace serving ranked candidates per context."""

    def __init__(self, trace: ExecutionTrace):
        self.trace = trace
        self.log_space = trace.log_space

        def wrap(tn: TraceNode) -> _EvalNode:
            return _EvalNode(tn, trace.cards, tuple(wrap(c) for c in tn.children))

        self.root = wrap(trace.root)
        if self.root.tn.post.scope:
            raise ValueError("trace root must be fully reduced")
        self.total = self.root.count_post
        self.covered = self.root.covered_post
        self.visit_bound = max(1, 2 * trace.n_query_vars - 1)

    def new_marks(self) -> MarkState:
        """Fresh mark state with the first (best) explanation consumed."""
        marks = MarkState(self)
        first = marks.post_get(self.root, (), 1)
        root_value = float(self.trace.root.post.values[0])
        assert first is not None and first.value == root_value, (
            "rank-1 candidate does not reproduce the saved best explanation"
        )
        marks.produced = 1
        marks.visits = 0
        return marks


def build_eval_tree(trace: ExecutionTrace) -> EvalTree:
    """Rearrange a completed trace for next-best queries.

    Subtree streams materialise lazily, on the first query for a context;
    the rank-1 candidate at the root reproduces the saved best explanation.
    """
    return EvalTree(trace)


def next_mpe(tree: EvalTree, marks: MarkState):
    """The next-ranked full assignment, or ``None`` once every assignment
    has been produced.  Returns ``(assignment, probability, visit_count)``;
    the visit count is checked against the ``2n - 1`` bound."""
    rank = marks.produced + 1
    if rank > tree.total:
        return None
    marks.visits = 0
    cand = marks.post_get(tree.root, (), rank)
    assert cand is not None, "stream exhausted before the assignment count"
    marks.produced = rank
    if marks.visits > tree.visit_bound:
        raise AssertionError(
            f"visit bound violated: {marks.visits} > {tree.visit_bound}"
        )
    assignment = dict(zip(tree.covered, cand.extension))
    probability = math.exp(cand.value) if tree.log_space else cand.value
    return assignment, probability, marks.visits


@dataclass
class KBestResult:
    """Ranked explanations plus enumeration instrumentation."""

    items: list[tuple[dict[int, int], float]]
    visits: list[int]  # stream visits per next-best step (first item is free)
    exhausted: bool
    total: int
    stats: FactoringStats
    log_space: bool


def find_l_mpe(
    net: Network,
    evidence: Evidence | None = None,
    l: int = 1,
    strategy: str = "min-degree",
    *,
    log_space: bool = False,
    tree: FactoringTree | None = None,
) -> KBestResult:
    """The ``l`` most probable explanations in non-increasing order.

    The first explanation comes from the plan execution; each further one
    from a single next-best query.  If ``l`` exceeds the number of
    assignments, all of them are returned and exhaustion is reported.
    """
    if l < 1:
        raise QueryError("l must be at least 1")
    result, trace = find_mpe(
        net, evidence, strategy, log_space=log_space, tree=tree
    )
    items = [(result.assignment, result.probability)]
    visits: list[int] = []
    total = math.prod(trace.cards.values()) if trace.cards else 1
    if l > 1:
        eval_tree = build_eval_tree(trace)
        marks = eval_tree.new_marks()
        while len(items) < l:
            step = next_mpe(eval_tree, marks)
            if step is None:
                break
            assignment, probability, visit_count = step
            items.append((assignment, probability))
            visits.append(visit_count)
    return KBestResult(
        items, visits, len(items) == total, total, result.stats, log_space
    )

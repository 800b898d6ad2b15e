"""Exact inference for discrete Bayesian networks: most probable
explanations, cheap next-best enumeration, and subset queries."""

from .errors import BnmpeError, FactorInvariantError, NetworkFormatError, QueryError
from .factor import (
    Factor,
    conformal_product,
    format_factor,
    reduce_max,
    restrict,
    sort_scope,
    sum_out,
    unit_factor,
)
from .factoring import (
    STRATEGIES,
    FactoringStats,
    FactoringTree,
    build_factoring,
    elimination_order,
    predict_max_dimensionality,
    tree_from_shape,
)
from .kbest import (
    EvalTree,
    KBestResult,
    MarkState,
    RankedCandidate,
    build_eval_tree,
    find_l_mpe,
    gen_next,
    gen_next_pair,
    next_mpe,
)
from .map_query import (
    MapResult,
    QueryPartition,
    find_l_map,
    find_map,
    lemma1_applicable,
    lemma2_applicable,
    relevant_set,
)
from .mpe import ExecutionTrace, MpeResult, find_mpe, verify_assignment
from .network import (
    Cpt,
    Evidence,
    Network,
    Variable,
    apply_evidence,
    load_network,
    parse_network,
    serialize_network,
)
from .oracle import JointEntry, enumerate_joint, oracle_map, oracle_map_top_l, oracle_top_l

__version__ = "0.1.0"

__all__ = [
    "BnmpeError",
    "Cpt",
    "EvalTree",
    "Evidence",
    "ExecutionTrace",
    "Factor",
    "FactorInvariantError",
    "FactoringStats",
    "FactoringTree",
    "JointEntry",
    "KBestResult",
    "MapResult",
    "MarkState",
    "MpeResult",
    "Network",
    "NetworkFormatError",
    "QueryError",
    "QueryPartition",
    "RankedCandidate",
    "STRATEGIES",
    "Variable",
    "apply_evidence",
    "build_eval_tree",
    "build_factoring",
    "conformal_product",
    "elimination_order",
    "enumerate_joint",
    "find_l_map",
    "find_l_mpe",
    "find_map",
    "find_mpe",
    "format_factor",
    "gen_next",
    "gen_next_pair",
    "lemma1_applicable",
    "lemma2_applicable",
    "load_network",
    "next_mpe",
    "oracle_map",
    "oracle_map_top_l",
    "oracle_top_l",
    "parse_network",
    "predict_max_dimensionality",
    "reduce_max",
    "relevant_set",
    "restrict",
    "serialize_network",
    "sort_scope",
    "sum_out",
    "tree_from_shape",
    "unit_factor",
    "verify_assignment",
]

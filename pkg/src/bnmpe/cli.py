"""Command-line surface: load a network file, run a query, emit JSON.

Exit codes: 0 success, 2 file/parse/validation problems, 3 ill-posed
queries (unknown variable, observed target, brute-force size guard).
Output is deterministic byte-for-byte for fixed inputs and flags.
"""

from __future__ import annotations

import functools
import json
import math
import sys

import click

from .errors import NetworkFormatError, QueryError
from .factoring import STRATEGIES
from .kbest import find_l_mpe
from .map_query import find_l_map, find_map
from .mpe import find_mpe
from .network import Network, load_network
from .oracle import oracle_map_top_l, oracle_top_l


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (NetworkFormatError, OSError) as exc:
            _fail(2, str(exc))
        except QueryError as exc:
            _fail(3, str(exc))

    return wrapper


def _parse_evidence(net: Network, text: str | None) -> dict[int, int]:
    evidence: dict[int, int] = {}
    if not text:
        return evidence
    for item in text.split(","):
        item = item.strip()
        if not item or "=" not in item:
            raise QueryError(f"evidence item {item!r} is not name=state")
        name, label = (part.strip() for part in item.split("=", 1))
        var = net.var_id(name)
        if var in evidence:
            raise QueryError(f"variable {name!r} observed twice")
        evidence[var] = net.state_index(var, label)
    return evidence


def _parse_targets(net: Network, text: str) -> list[int]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    if not names:
        raise QueryError("no target variables given")
    return [net.var_id(name) for name in names]


def _named_assignment(net: Network, assignment: dict[int, int]) -> dict[str, str]:
    return {
        net.variables[v].name: net.variables[v].states[s]
        for v, s in sorted(assignment.items())
    }


def _results_block(net: Network, items) -> list[dict]:
    return [
        {
            "rank": rank,
            "assignment": _named_assignment(net, assignment),
            "probability": probability,
            "probability_4dp": f"{probability:.4f}",
        }
        for rank, (assignment, probability) in enumerate(items, start=1)
    ]


def _emit(doc: dict) -> None:
    click.echo(json.dumps(doc, indent=2))


def _document(net, items, *, strategy, log_space, exhausted, oracle, evidence,
              stats=None, visits=None, with_stats=False) -> dict:
    doc = {"results": _results_block(net, items)}
    if with_stats:
        doc["stats"] = {
            "max_dimensionality": stats.max_dimensionality if stats else 0,
            "multiplications": stats.multiplications if stats else 0,
            "comparisons": stats.comparisons if stats else 0,
            "nodes_visited": list(visits or []),
        }
    doc["engine"] = {
        "strategy": strategy,
        "log_space": log_space,
        "exhausted": exhausted,
        "oracle": oracle,
        "evidence": _named_assignment(net, evidence),
    }
    return doc


def _total_assignments(net: Network, evidence, over=None) -> int:
    vars = over if over is not None else [
        v for v in range(net.n_vars) if v not in evidence
    ]
    return math.prod(net.card(v) for v in vars) if vars else 1


_common = [
    click.option("--evidence", "evidence_text", default=None, metavar="N=S,...",
                 help="Observed states, e.g. d=1,f=0."),
    click.option("--strategy", type=click.Choice(STRATEGIES), default="min-degree",
                 show_default=True, help="Factoring strategy."),
    click.option("--log-space", is_flag=True, envvar="MPE_LOG_SPACE",
                 help="Compute in log space (sums instead of products)."),
    click.option("--stats", "with_stats", is_flag=True, help="Include instrumentation."),
    click.option("--oracle", "use_oracle", is_flag=True,
                 help="Answer by brute-force enumeration instead of the engine."),
]


def _with_common(fn):
    for option in reversed(_common):
        fn = option(fn)
    return fn


@click.group()
def main() -> None:
    """Exact MPE, k-best explanation, and subset queries on discrete
    Bayesian networks."""


@main.command()
@click.argument("file", type=click.Path())
@_guarded
def info(file: str) -> None:
    """Summarise a network file."""
    net = load_network(file)
    doc = {
        "variables": net.n_vars,
        "largest_family": net.largest_family(),
        "detail": [
            {
                "name": v.name,
                "states": list(v.states),
                "parents": [net.variables[p].name for p in net.cpts[v.id].parents],
            }
            for v in net.variables
        ],
    }
    _emit(doc)


@main.command()
@click.argument("file", type=click.Path())
@_with_common
@_guarded
def mpe(file, evidence_text, strategy, log_space, with_stats, use_oracle) -> None:
    """Most probable explanation of the non-evidence variables."""
    net = load_network(file)
    evidence = _parse_evidence(net, evidence_text)
    total = _total_assignments(net, evidence)
    if use_oracle:
        items = oracle_top_l(net, evidence, 1)
        doc = _document(net, items, strategy=strategy, log_space=log_space,
                        exhausted=total == 1, oracle=True, evidence=evidence,
                        with_stats=with_stats)
    else:
        result, _ = find_mpe(net, evidence, strategy, log_space=log_space)
        items = [(result.assignment, result.probability)]
        doc = _document(net, items, strategy=strategy, log_space=log_space,
                        exhausted=total == 1, oracle=False, evidence=evidence,
                        stats=result.stats, with_stats=with_stats)
    _emit(doc)


@main.command()
@click.argument("file", type=click.Path())
@click.option("-l", "count", type=int, default=2, show_default=True,
              help="How many explanations to return.")
@_with_common
@_guarded
def kbest(file, count, evidence_text, strategy, log_space, with_stats, use_oracle) -> None:
    """The l most probable explanations, best first."""
    net = load_network(file)
    evidence = _parse_evidence(net, evidence_text)
    if count < 1:
        raise QueryError("l must be at least 1")
    if use_oracle:
        items = oracle_top_l(net, evidence, count)
        total = _total_assignments(net, evidence)
        doc = _document(net, items, strategy=strategy, log_space=log_space,
                        exhausted=len(items) == total, oracle=True,
                        evidence=evidence, with_stats=with_stats)
    else:
        result = find_l_mpe(net, evidence, count, strategy, log_space=log_space)
        doc = _document(net, result.items, strategy=strategy, log_space=log_space,
                        exhausted=result.exhausted, oracle=False, evidence=evidence,
                        stats=result.stats, visits=result.visits,
                        with_stats=with_stats)
    _emit(doc)


@main.command("map")
@click.argument("file", type=click.Path())
@click.option("--targets", required=True, metavar="N,N,...",
              help="Target variables, e.g. c,d,e.")
@click.option("-l", "count", type=int, default=1, show_default=True,
              help="How many target assignments to return.")
@_with_common
@_guarded
def map_cmd(file, targets, count, evidence_text, strategy, log_space,
            with_stats, use_oracle) -> None:
    """Most probable assignment(s) of a target subset, rest summed out."""
    net = load_network(file)
    evidence = _parse_evidence(net, evidence_text)
    phi = _parse_targets(net, targets)
    if count < 1:
        raise QueryError("l must be at least 1")
    total = _total_assignments(net, evidence, over=sorted(set(phi)))
    if use_oracle:
        items = oracle_map_top_l(net, phi, evidence, count)
        doc = _document(net, items, strategy=strategy, log_space=log_space,
                        exhausted=len(items) == total, oracle=True,
                        evidence=evidence, with_stats=with_stats)
    elif count == 1:
        result = find_map(net, phi, evidence, strategy, log_space=log_space)
        doc = _document(net, [(result.assignment, result.probability)],
                        strategy=strategy, log_space=log_space,
                        exhausted=total == 1, oracle=False, evidence=evidence,
                        stats=result.stats, with_stats=with_stats)
    else:
        result = find_l_map(net, phi, evidence, count, strategy, log_space=log_space)
        doc = _document(net, result.items, strategy=strategy, log_space=log_space,
                        exhausted=result.exhausted, oracle=False, evidence=evidence,
                        stats=result.stats, visits=result.visits,
                        with_stats=with_stats)
    _emit(doc)


if __name__ == "__main__":
    main()

from typing import Optional

from rich.syntax import Syntax

from sieve_fgac.src import COLORS
from sieve_fgac.src.sieve.cost_model import Strategy
from sieve_fgac.src.sieve.middleware import Sieve
from sieve_fgac.src.sieve.policy import QueryMetadata
from sieve_fgac.src.sieve.utils import (
    console,
    print_json,
    print_verbose,
    render_rows,
)


def rewrite(
    sieve: Sieve,
    sql: str,
    qm: QueryMetadata,
    strategy: Optional[Strategy] = None,
    json_output: bool = False,
) -> dict:
    rewritten = sieve.rewrite(sql, qm, strategy)
    data = {
        "sql": rewritten.sql,
        "strategies": rewritten.strategies,
        "costs": {r: c.to_dict() for r, c in rewritten.costs.items()},
    }
    if json_output:
        print_json(data)
        return data
    console.print(Syntax(rewritten.sql, "sql", word_wrap=True))
    for relation, chosen in rewritten.strategies.items():
        console.print(
            f"{relation}: [{COLORS.P.STRATEGY}]{chosen}[/{COLORS.P.STRATEGY}]"
        )
    return data


def run(
    sieve: Sieve,
    sql: str,
    qm: QueryMetadata,
    strategy: Optional[Strategy] = None,
    json_output: bool = False,
) -> dict:
    outcome = sieve.query(sql, qm, strategy)
    data = {
        "columns": list(outcome.result.columns),
        "rows": [list(r) for r in outcome.result.rows],
        "strategies": outcome.rewrite.strategies,
        "counters": outcome.counters.to_dict(),
        "cost_units": outcome.counters.cost_units(sieve.k),
        "timings": outcome.timings,
    }
    print_verbose(
        f"{len(outcome.result)} rows; {outcome.counters.policy_evals} policy evaluations; "
        f"strategies {outcome.rewrite.strategies}"
    )
    if json_output:
        print_json(data)
        return data
    console.print(
        render_rows(
            outcome.result.columns,
            outcome.result.rows,
            title=f"{len(outcome.result)} rows for querier {qm.querier}",
        )
    )
    return data


def explain(
    sieve: Sieve,
    sql: str,
    qm: QueryMetadata,
    json_output: bool = False,
) -> dict:
    """Access paths the engine would use and the estimated cost of every strategy."""
    parsed = sieve.parse(sql)
    paths = sieve.engine.explain(parsed)
    ges, _ = sieve.acquire(parsed, qm)
    rewritten = sieve.rewrite_parsed(parsed, ges, None)
    data = {
        "access_paths": [p.to_dict() for p in paths],
        "costs": {r: c.to_dict() for r, c in rewritten.costs.items()},
        "guards": {r: len(ge.guards) for r, ge in ges.items()},
    }
    if json_output:
        print_json(data)
        return data
    console.print(
        render_rows(
            ("Relation", "Alias", "Access path", "Predicate", "Estimated rows"),
            (
                (p.relation, p.alias, p.path, p.predicate.to_sql() if p.predicate else "", f"{p.estimated_rows:.1f}")
                for p in paths
            ),
            title="Access paths",
        )
    )
    console.print(
        render_rows(
            ("Relation", "Guards", "LinearScan", "IndexQuery", "IndexGuards", "Chosen"),
            (
                (
                    relation,
                    data["guards"][relation],
                    f"{c.linear_scan:.1f}",
                    f"{c.index_query:.1f}",
                    f"{c.index_guards:.1f}",
                    c.best.value,
                )
                for relation, c in rewritten.costs.items()
            ),
            title="Strategy costs",
        )
    )
    return data

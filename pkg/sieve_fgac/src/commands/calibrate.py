from typing import Optional

from sieve_fgac.src.sieve.cost_model import CostConstants, calibrate
from sieve_fgac.src.sieve.engine import Engine
from sieve_fgac.src.sieve.store import PolicyStore
from sieve_fgac.src.sieve.utils import console, print_json, print_verbose, render_rows


def run(
    output: Optional[str],
    deterministic: bool = False,
    engine: Optional[Engine] = None,
    relation: Optional[str] = None,
    store: Optional[PolicyStore] = None,
    sample_size: int = 200,
    seed: int = 0,
    json_output: bool = False,
) -> CostConstants:
    """
    Measures cost constants on ``relation`` (or a synthetic one) and writes them
    to ``output``.
    """
    policies = None
    if store is not None and relation is not None:
        policies = [p for p in store.all_policies() if p.relation == relation] or None
    if deterministic:
        print_verbose("Using the fixed default constants")
    with console.status(":stopwatch: Calibrating cost constants..."):
        k = calibrate(
            deterministic=deterministic,
            engine=engine,
            relation=relation,
            policies=policies,
            sample_size=sample_size,
            seed=seed,
        )
    if output:
        k.to_file(output)
    if json_output:
        print_json({**k.to_dict(), "output": output})
        return k
    console.print(
        render_rows(
            ("Constant", "Value"),
            [(name, "auto" if value is None else value) for name, value in k.to_dict().items()],
            title="Cost constants",
        )
    )
    if output:
        console.print(f"Wrote constants to {output}")
    return k
